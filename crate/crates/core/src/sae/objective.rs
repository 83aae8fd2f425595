//! Reconstruction + L1 objective and its closed-form gradients.
//!
//! With `pre = h·Wᵀ + b`, `z = relu(pre)`, `r = z·D − h`:
//!
//! ```text
//! L       = Σ r² + λ Σ z
//! ∂L/∂D   = 2 zᵀ r
//! ∂L/∂z   = 2 r Dᵀ + λ
//! ∂L/∂pre = ∂L/∂z ⊙ 1{pre > 0}
//! ∂L/∂W   = (∂L/∂pre)ᵀ h
//! ∂L/∂b   = Σ_rows ∂L/∂pre
//! ```

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::{relu, Real, SaeModel};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub l1: f64,
    pub total: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn new(recon: f64, l1: f64, lambda: f64) -> Self {
        Self {
            recon,
            l1,
            total: recon + lambda * l1,
            lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T: Real> {
    pub w_enc: Array2<T>,
    pub b_enc: Array1<T>,
    pub dictionary: Array2<T>,
}

fn sum_sq<T: Real>(a: impl IntoIterator<Item = T>) -> f64 {
    a.into_iter().map(|v| v.to_f64().unwrap().powi(2)).sum()
}

/// Squared Frobenius norm of `h − ĥ`.
pub fn reconstruction_loss<T: Real>(h: ArrayView2<'_, T>, h_hat: ArrayView2<'_, T>) -> Result<f64> {
    if h.dim() != h_hat.dim() {
        let (a, b) = (h.dim(), h_hat.dim());
        let (expected, found) = if a.0 != b.0 { (a.0, b.0) } else { (a.1, b.1) };
        return Err(Error::dim("reconstruction shape", expected, found));
    }
    Ok(sum_sq(h.iter().zip(h_hat.iter()).map(|(&a, &b)| a - b)))
}

/// Loss of the all-zeros reconstruction, i.e. `Σ h²`.
pub fn zero_baseline<T: Real>(h: ArrayView2<'_, T>) -> f64 {
    sum_sq(h.iter().copied())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "lambda {lambda} must be finite and >= 0"
        )))
    }
}

pub fn training_loss<T: Real>(
    h: ArrayView2<'_, T>,
    model: &SaeModel<T>,
    lambda: f64,
) -> Result<LossBreakdown> {
    check_lambda(lambda)?;
    let z = model.encode(h)?;
    let h_hat = model.decode(z.view())?;
    let recon = reconstruction_loss(h, h_hat.view())?;
    let l1: f64 = z.iter().map(|v| v.to_f64().unwrap()).sum();
    Ok(LossBreakdown::new(recon, l1, lambda))
}

pub fn gradients<T: Real>(
    h: ArrayView2<'_, T>,
    model: &SaeModel<T>,
    lambda: f64,
) -> Result<Gradients<T>> {
    loss_and_gradients(h, model, lambda).map(|(_, g, _)| g)
}

/// Forward and backward pass in one go. Also returns the activations so
/// the trainer can track feature liveness without re-encoding.
pub fn loss_and_gradients<T: Real>(
    h: ArrayView2<'_, T>,
    model: &SaeModel<T>,
    lambda: f64,
) -> Result<(LossBreakdown, Gradients<T>, Array2<T>)> {
    check_lambda(lambda)?;
    let pre = model.pre_activations(h)?;
    let z = pre.mapv(relu);
    let mut resid = model.decode(z.view())?;
    resid -= &h;

    let recon = sum_sq(resid.iter().copied());
    let l1: f64 = z.iter().map(|v| v.to_f64().unwrap()).sum();
    let loss = LossBreakdown::new(recon, l1, lambda);

    let two = T::from_f64(2.0).unwrap();
    let lam = T::from_f64(lambda).unwrap();
    resid.mapv_inplace(|v| v * two);

    let grad_dict = z.t().dot(&resid);
    let mut d_pre = resid.dot(&model.dictionary.t());
    Zip::from(&mut d_pre).and(&pre).for_each(|g, &p| {
        *g = if p > T::zero() { *g + lam } else { T::zero() };
    });
    let grad_w = d_pre.t().dot(&h);
    let grad_b = d_pre.sum_axis(Axis(0));

    Ok((
        loss,
        Gradients {
            w_enc: grad_w,
            b_enc: grad_b,
            dictionary: grad_dict,
        },
        z,
    ))
}

/// Mean over tokens of the number of strictly positive activations.
pub fn l0_metric<T: Real>(z: ArrayView2<'_, T>) -> Result<f64> {
    if z.nrows() == 0 {
        return Err(Error::EmptyInput(
            "L0 of an activation matrix with no tokens",
        ));
    }
    let active = z.iter().filter(|&&v| v > T::zero()).count();
    Ok(active as f64 / z.nrows() as f64)
}
