use ndarray::{Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};

use super::TrainState;
use crate::sae::SaeModel;
use crate::{Error, Result};

/// Per-step, per-feature maximum activation over the last `window` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityWindow {
    maxes: Array2<f32>,
    cursor: usize,
    filled: usize,
}

impl ActivityWindow {
    pub fn new(window: usize, n_features: usize) -> Self {
        Self {
            maxes: Array2::zeros((window, n_features)),
            cursor: 0,
            filled: 0,
        }
    }

    pub fn window(&self) -> usize {
        self.maxes.nrows()
    }

    pub fn is_full(&self) -> bool {
        self.filled == self.window()
    }

    /// Records one step worth of activations (`batch × n`).
    pub fn record(&mut self, z: ArrayView2<'_, f32>) {
        let maxes = z.fold_axis(Axis(0), 0.0f32, |&a, &b| a.max(b));
        self.maxes.row_mut(self.cursor).assign(&maxes);
        self.cursor = (self.cursor + 1) % self.window();
        self.filled = (self.filled + 1).min(self.window());
    }

    /// Features whose maximum over the recorded steps stays below `threshold`.
    pub fn dead_features(&self, threshold: f64) -> Vec<usize> {
        let rows = self.maxes.slice(ndarray::s![..self.filled, ..]);
        rows.fold_axis(Axis(0), 0.0f32, |&a, &b| a.max(b))
            .iter()
            .enumerate()
            .filter(|(_, &m)| (m as f64) < threshold)
            .map(|(k, _)| k)
            .collect()
    }
}

/// Re-initializes every dead feature from the worst-reconstructed tokens
/// of `recent_batch`.
///
/// Dead features are paired with batch tokens in decreasing order of
/// reconstruction error. Each one gets the token's unit direction as its
/// dictionary row, the same direction scaled to `0.2 ×` the mean norm of
/// the live encoder rows as its encoder row, a zero bias and zero Adam
/// moments. Returns the number of features reset.
pub fn resample_dead(
    model: &mut SaeModel<f32>,
    state: &mut TrainState,
    recent_batch: ArrayView2<'_, f32>,
    threshold: f64,
) -> Result<usize> {
    if !state.activity.is_full() {
        return Err(Error::Precondition(
            "dead-feature window not yet full; resampling needs a complete window".into(),
        ));
    }
    if recent_batch.nrows() == 0 {
        return Err(Error::EmptyInput("resampling batch has no tokens"));
    }
    let dead = state.activity.dead_features(threshold);
    if dead.is_empty() {
        return Ok(0);
    }

    let z = model.encode(recent_batch)?;
    let recon = model.decode(z.view())?;
    let errors: Vec<f64> = (&recon - &recent_batch)
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|&v| (v as f64) * (v as f64)).sum())
        .collect();
    let mut order: Vec<usize> = (0..errors.len()).collect();
    order.sort_by(|&a, &b| errors[b].total_cmp(&errors[a]));

    let mut is_dead = vec![false; model.n()];
    for &k in &dead {
        is_dead[k] = true;
    }
    let live_norms: Vec<f64> = model
        .w_enc
        .rows()
        .into_iter()
        .zip(&is_dead)
        .filter(|(_, &d)| !d)
        .map(|(r, _)| r.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt())
        .collect();
    let mean_live = if live_norms.is_empty() {
        1.0
    } else {
        live_norms.iter().sum::<f64>() / live_norms.len() as f64
    };
    let encoder_scale = (0.2 * mean_live) as f32;

    for (i, &k) in dead.iter().enumerate() {
        let token = recent_batch.row(order[i % order.len()]);
        let norm = token
            .iter()
            .map(|&v| (v as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        let direction: Vec<f32> = if norm > 0.0 {
            token.iter().map(|&v| (v as f64 / norm) as f32).collect()
        } else {
            let raw: Vec<f64> = (0..model.m())
                .map(|_| StandardNormal.sample(&mut state.rng))
                .collect();
            let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            raw.iter().map(|v| (v / n) as f32).collect()
        };
        for (d, &v) in direction.iter().enumerate() {
            model.dictionary[[k, d]] = v;
            model.w_enc[[k, d]] = v * encoder_scale;
        }
        model.b_enc[k] = 0.0;
        state.adam.reset_feature(k);
    }
    Ok(dead.len())
}
