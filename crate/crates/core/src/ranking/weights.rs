use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FeatureTokenSample;
use crate::{Error, Result};

/// One cross-modal weight per feature, each in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossModalWeights {
    pub delta: f64,
    pub top_k: usize,
    pub sample_size: usize,
    pub omega: Vec<f64>,
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Mean cosine similarity between the `i`-th strongest text token and the
/// `i`-th strongest vision token of each feature, over
/// `i < min(top_k, |text|, |vision|)`. Features missing either side get 0.
pub fn cross_modal_weight(sample: &FeatureTokenSample, top_k: usize) -> Result<CrossModalWeights> {
    if top_k == 0 {
        return Err(Error::InvalidArgument("top_k must be at least 1".into()));
    }
    let omega = sample
        .features
        .iter()
        .map(|f| {
            let pairs = top_k.min(f.text.len()).min(f.vision.len());
            if pairs == 0 {
                return 0.0;
            }
            let sum: f64 = f.text[..pairs]
                .iter()
                .zip(&f.vision[..pairs])
                .map(|(t, v)| cosine(&t.hidden, &v.hidden))
                .sum();
            sum / pairs as f64
        })
        .collect();
    Ok(CrossModalWeights {
        delta: sample.delta,
        top_k,
        sample_size: sample.sample_size,
        omega,
    })
}

/// Mean of the nonzero weights.
pub fn average_model_score(weights: &CrossModalWeights) -> Result<f64> {
    let nonzero: Vec<f64> = weights
        .omega
        .iter()
        .copied()
        .filter(|&w| w != 0.0)
        .collect();
    if nonzero.is_empty() {
        return Err(Error::Degenerate("every cross-modal weight is zero"));
    }
    Ok(nonzero.iter().sum::<f64>() / nonzero.len() as f64)
}

impl CrossModalWeights {
    pub fn n(&self) -> usize {
        self.omega.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("weights serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let w: Self =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("weights file: {e}")))?;
        if w.omega.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::Format("weights file: omega outside [-1, 1]".into()));
        }
        Ok(w)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
