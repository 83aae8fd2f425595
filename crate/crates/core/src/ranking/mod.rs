//! Feature-based data ranking.
//!
//! Cross-modal weighting works in three stages: collect, per feature, the
//! hidden states of sampled tokens that activate it above `delta`; weight
//! each feature by the mean rank-paired cosine similarity between its
//! strongest text tokens and its strongest vision tokens; score every item
//! by summing the weights of the features it activates. Two simpler
//! rankings count activated features and co-occurring features instead.

mod collect;
mod manifest;
mod weights;

pub use collect::{collect_activations, ActivatedToken, FeatureTokenSample, FeatureTokens};
pub(crate) use manifest::retained_count;
pub use manifest::{filter_manifest, RankedEntry, RankedManifest};
pub use weights::{average_model_score, cross_modal_weight, CrossModalWeights};

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{DataItem, ItemSource, Modality};
use crate::sae::SaeModel;
use crate::{Error, Result};

pub const DEFAULT_DELTA: f64 = 1.0;
pub const DEFAULT_TOP_K: usize = 5;
pub const DEFAULT_SAMPLE_SIZE: usize = 1000;
pub const DEFAULT_MAX_TOKENS_PER_FEATURE: usize = 1024;

const RANK_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RankMethod {
    /// Sum of cross-modal weights of the activated features.
    Cosine,
    /// Number of activated features.
    L0,
    /// Number of features activated on both a text and a vision token.
    Cooccur,
}

impl RankMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            RankMethod::Cosine => "cosine",
            RankMethod::L0 => "l0",
            RankMethod::Cooccur => "cooccur",
        }
    }
}

impl std::fmt::Display for RankMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub(crate) fn check_delta(delta: f64) -> Result<()> {
    if delta >= 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "activation bound {delta} must be finite and >= 0"
        )))
    }
}

/// Which features an item activates, at item level.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ItemFeatures {
    /// Features with `max_j z[j, k] > delta`, ascending.
    pub activated: Vec<usize>,
    /// Features above `delta` on at least one text and one vision token, ascending.
    pub cooccurring: Vec<usize>,
}

impl ItemFeatures {
    pub fn from_activations(z: ArrayView2<'_, f32>, modalities: &[Modality], delta: f64) -> Self {
        debug_assert_eq!(z.nrows(), modalities.len());
        let mut out = Self::default();
        for (k, col) in z.columns().into_iter().enumerate() {
            let (mut text, mut vision) = (false, false);
            for (&v, &modality) in col.iter().zip(modalities) {
                if (v as f64) > delta {
                    match modality {
                        Modality::Text => text = true,
                        Modality::Vision => vision = true,
                    }
                }
            }
            if text || vision {
                out.activated.push(k);
            }
            if text && vision {
                out.cooccurring.push(k);
            }
        }
        out
    }

    pub fn of_item(item: &DataItem, model: &SaeModel<f32>, delta: f64) -> Result<Self> {
        let z = model.encode_item(item)?.z;
        let modalities: Vec<Modality> = item.records.iter().map(|r| r.modality).collect();
        Ok(Self::from_activations(z.view(), &modalities, delta))
    }
}

fn item_score(
    features: &ItemFeatures,
    method: RankMethod,
    weights: Option<&CrossModalWeights>,
) -> f64 {
    // `+ 0.0` turns the -0.0 of an empty float sum into 0.0.
    0.0 + match method {
        RankMethod::Cosine => {
            let omega = &weights.expect("checked by caller").omega;
            features.activated.iter().map(|&k| omega[k]).sum()
        }
        RankMethod::L0 => features.activated.len() as f64,
        RankMethod::Cooccur => features.cooccurring.len() as f64,
    }
}

/// Scores every item of `source` and sorts by score, highest first, ties
/// kept in input order.
pub fn rank(
    source: &dyn ItemSource,
    model: &SaeModel<f32>,
    method: RankMethod,
    weights: Option<&CrossModalWeights>,
    delta: f64,
) -> Result<RankedManifest> {
    check_delta(delta)?;
    if method == RankMethod::Cosine {
        let w = weights.ok_or(Error::MissingInput(
            "cosine ranking needs cross-modal weights",
        ))?;
        if w.omega.len() != model.n() {
            return Err(Error::dim(
                "cross-modal weight count",
                model.n(),
                w.omega.len(),
            ));
        }
    }
    let mut entries = Vec::new();
    let mut chunk: Vec<DataItem> = Vec::with_capacity(RANK_CHUNK);
    let flush = |chunk: &mut Vec<DataItem>, entries: &mut Vec<RankedEntry>| -> Result<()> {
        let scored: Vec<Result<(u64, f64)>> = chunk
            .par_iter()
            .map(|item| {
                let f = ItemFeatures::of_item(item, model, delta)?;
                Ok((item.item_id, item_score(&f, method, weights)))
            })
            .collect();
        for s in scored {
            let (item_id, score) = s?;
            let position = entries.len();
            entries.push(RankedEntry {
                item_id,
                score,
                position,
            });
        }
        chunk.clear();
        Ok(())
    };
    for item in source.items()? {
        chunk.push(item?);
        if chunk.len() == RANK_CHUNK {
            flush(&mut chunk, &mut entries)?;
        }
    }
    flush(&mut chunk, &mut entries)?;
    Ok(RankedManifest::from_unsorted(method, entries))
}

pub fn rank_cosine(
    source: &dyn ItemSource,
    model: &SaeModel<f32>,
    weights: &CrossModalWeights,
    delta: f64,
) -> Result<RankedManifest> {
    rank(source, model, RankMethod::Cosine, Some(weights), delta)
}

pub fn rank_l0(
    source: &dyn ItemSource,
    model: &SaeModel<f32>,
    delta: f64,
) -> Result<RankedManifest> {
    rank(source, model, RankMethod::L0, None, delta)
}

pub fn rank_cooccur(
    source: &dyn ItemSource,
    model: &SaeModel<f32>,
    delta: f64,
) -> Result<RankedManifest> {
    rank(source, model, RankMethod::Cooccur, None, delta)
}
