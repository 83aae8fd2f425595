use ndarray::{Array, Dimension, Zip};

use crate::sae::{Gradients, Real, SaeModel};

/// First and second moment estimates for one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T: Real, D: Dimension> {
    pub first: Array<T, D>,
    pub second: Array<T, D>,
}

impl<T: Real, D: Dimension> Moments<T, D> {
    pub fn zeros_like(param: &Array<T, D>) -> Self {
        Self {
            first: Array::zeros(param.raw_dim()),
            second: Array::zeros(param.raw_dim()),
        }
    }

    fn update(&mut self, param: &mut Array<T, D>, grad: &Array<T, D>, h: &Hyper<T>) {
        Zip::from(param)
            .and(grad)
            .and(&mut self.first)
            .and(&mut self.second)
            .for_each(|p, &g, m, v| {
                *m = h.beta1 * *m + (T::one() - h.beta1) * g;
                *v = h.beta2 * *v + (T::one() - h.beta2) * g * g;
                let m_hat = *m / h.correction1;
                let v_hat = *v / h.correction2;
                *p -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
            });
    }
}

struct Hyper<T> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    correction1: T,
    correction2: T,
}

/// Adam state covering the three parameter blocks of an [`SaeModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T: Real> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub w_enc: Moments<T, ndarray::Ix2>,
    pub b_enc: Moments<T, ndarray::Ix1>,
    pub dictionary: Moments<T, ndarray::Ix2>,
}

impl<T: Real> Adam<T> {
    pub fn new(model: &SaeModel<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            t: 0,
            w_enc: Moments::zeros_like(&model.w_enc),
            b_enc: Moments::zeros_like(&model.b_enc),
            dictionary: Moments::zeros_like(&model.dictionary),
        }
    }

    pub fn step(&mut self, model: &mut SaeModel<T>, grads: &Gradients<T>, lr: f64) {
        self.t += 1;
        let t = self.t as i32;
        let c = |v: f64| T::from_f64(v).unwrap();
        let h = Hyper {
            lr: c(lr),
            beta1: c(self.beta1),
            beta2: c(self.beta2),
            eps: c(self.eps),
            correction1: c(1.0 - self.beta1.powi(t)),
            correction2: c(1.0 - self.beta2.powi(t)),
        };
        self.w_enc.update(&mut model.w_enc, &grads.w_enc, &h);
        self.b_enc.update(&mut model.b_enc, &grads.b_enc, &h);
        self.dictionary
            .update(&mut model.dictionary, &grads.dictionary, &h);
    }

    /// Zeroes every moment that belongs to feature `k`.
    pub fn reset_feature(&mut self, k: usize) {
        self.w_enc.first.row_mut(k).fill(T::zero());
        self.w_enc.second.row_mut(k).fill(T::zero());
        self.b_enc.first[k] = T::zero();
        self.b_enc.second[k] = T::zero();
        self.dictionary.first.row_mut(k).fill(T::zero());
        self.dictionary.second.row_mut(k).fill(T::zero());
    }
}
