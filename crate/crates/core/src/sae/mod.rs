//! Sparse autoencoder model: ReLU encoder plus a bias-free linear
//! dictionary decoder.
//!
//! Shapes follow the row-per-token convention: an input `h` is `l × m`,
//! the encoder weight and the dictionary are both `n × m`, and feature
//! activations are `l × n`.

mod io;
mod objective;

pub use io::{MODEL_MAGIC, MODEL_VERSION};
pub use objective::{
    gradients, l0_metric, loss_and_gradients, reconstruction_loss, training_loss, zero_baseline,
    Gradients, LossBreakdown,
};

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

use crate::corpus::DataItem;
use crate::{Error, Result};

/// Floating-point element type of a model. Training runs in `f32`;
/// gradient checks run in `f64`.
pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Display
    + Sum
    + Send
    + Sync
    + 'static
{
}

impl<T> Real for T where
    T: Float
        + LinalgScalar
        + ScalarOperand
        + FromPrimitive
        + AddAssign
        + SubAssign
        + MulAssign
        + DivAssign
        + Debug
        + Display
        + Sum
        + Send
        + Sync
        + 'static
{
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel<T: Real = f32> {
    /// `n × m`
    pub w_enc: Array2<T>,
    /// `n`
    pub b_enc: Array1<T>,
    /// `n × m`; row `k` is the direction of feature `k`.
    pub dictionary: Array2<T>,
}

/// Post-ReLU activations of one data item, `l × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureActivations {
    pub item_id: u64,
    pub z: Array2<f32>,
}

impl<T: Real> SaeModel<T> {
    pub fn new(w_enc: Array2<T>, b_enc: Array1<T>, dictionary: Array2<T>) -> Result<Self> {
        let (n, m) = w_enc.dim();
        if n == 0 || m == 0 {
            return Err(Error::InvalidArgument(
                "model needs n >= 1 and m >= 1".into(),
            ));
        }
        if b_enc.len() != n {
            return Err(Error::dim("encoder bias length", n, b_enc.len()));
        }
        if dictionary.nrows() != n {
            return Err(Error::dim("dictionary rows", n, dictionary.nrows()));
        }
        if dictionary.ncols() != m {
            return Err(Error::dim("dictionary columns", m, dictionary.ncols()));
        }
        let model = Self {
            w_enc,
            b_enc,
            dictionary,
        };
        if !model.is_finite() {
            return Err(Error::InvalidArgument(
                "model parameters must be finite".into(),
            ));
        }
        Ok(model)
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            w_enc: Array2::zeros((n, m)),
            b_enc: Array1::zeros(n),
            dictionary: Array2::zeros((n, m)),
        }
    }

    /// Feature count.
    pub fn n(&self) -> usize {
        self.w_enc.nrows()
    }

    /// Input width.
    pub fn m(&self) -> usize {
        self.w_enc.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.w_enc
            .iter()
            .chain(&self.b_enc)
            .chain(&self.dictionary)
            .all(|v| v.is_finite())
    }

    /// `h · W_encᵀ + b_enc`, before the ReLU.
    pub fn pre_activations(&self, h: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if h.ncols() != self.m() {
            return Err(Error::dim("encoder input width", self.m(), h.ncols()));
        }
        let mut pre = h.dot(&self.w_enc.t());
        pre += &self.b_enc;
        Ok(pre)
    }

    pub fn encode(&self, h: ArrayView2<'_, T>) -> Result<Array2<T>> {
        let mut z = self.pre_activations(h)?;
        z.mapv_inplace(relu);
        Ok(z)
    }

    /// `z · dictionary`. No decoder bias.
    pub fn decode(&self, z: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if z.ncols() != self.n() {
            return Err(Error::dim("decoder input width", self.n(), z.ncols()));
        }
        Ok(z.dot(&self.dictionary))
    }

    /// Rescales every dictionary row to unit L2 norm. Zero rows are left alone.
    pub fn normalize_dictionary(&mut self) {
        for mut row in self.dictionary.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > T::zero() {
                row /= norm;
            }
        }
    }

    pub fn dictionary_row_norms(&self) -> Array1<T> {
        self.dictionary.map_axis(Axis(1), |r| r.dot(&r).sqrt())
    }

    pub fn cast<U: Real>(&self) -> SaeModel<U> {
        let c = |v: &T| U::from_f64(v.to_f64().unwrap()).unwrap();
        SaeModel {
            w_enc: self.w_enc.map(c),
            b_enc: self.b_enc.map(c),
            dictionary: self.dictionary.map(c),
        }
    }
}

impl SaeModel<f32> {
    pub fn encode_item(&self, item: &DataItem) -> Result<FeatureActivations> {
        let h = item.hidden_matrix(self.m())?;
        Ok(FeatureActivations {
            item_id: item.item_id,
            z: self.encode(h.view())?,
        })
    }
}

#[inline]
pub(crate) fn relu<T: Real>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}
