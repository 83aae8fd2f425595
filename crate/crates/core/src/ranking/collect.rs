use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::check_delta;
use crate::corpus::{DataItem, ItemSource, Modality};
use crate::sae::SaeModel;
use crate::{Error, Result};

/// One token that activated a feature above the bound.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivatedToken {
    pub item_id: u64,
    pub token_index: u32,
    pub modality: Modality,
    pub activation: f32,
    pub hidden: Vec<f32>,
}

/// Activating tokens of one feature, split by modality, each list sorted
/// by activation (descending, ties in collection order) and capped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureTokens {
    pub text: Vec<ActivatedToken>,
    pub vision: Vec<ActivatedToken>,
}

impl FeatureTokens {
    pub fn side(&self, modality: Modality) -> &[ActivatedToken] {
        match modality {
            Modality::Text => &self.text,
            Modality::Vision => &self.vision,
        }
    }

    pub fn len(&self) -> usize {
        self.text.len() + self.vision.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTokenSample {
    pub delta: f64,
    /// Number of items actually sampled.
    pub sample_size: usize,
    pub max_tokens_per_feature: usize,
    pub features: Vec<FeatureTokens>,
}

fn sort_and_cap(list: &mut Vec<ActivatedToken>, cap: usize) {
    list.sort_by(|a, b| b.activation.total_cmp(&a.activation));
    list.truncate(cap);
}

impl FeatureTokenSample {
    fn new(n: usize, delta: f64, max_tokens_per_feature: usize) -> Self {
        Self {
            delta,
            sample_size: 0,
            max_tokens_per_feature,
            features: vec![FeatureTokens::default(); n],
        }
    }

    fn push(&mut self, k: usize, tok: ActivatedToken) {
        let cap = self.max_tokens_per_feature;
        let f = &mut self.features[k];
        let list = match tok.modality {
            Modality::Text => &mut f.text,
            Modality::Vision => &mut f.vision,
        };
        list.push(tok);
        if list.len() >= 2 * cap {
            sort_and_cap(list, cap);
        }
    }

    fn finish(&mut self) {
        let cap = self.max_tokens_per_feature;
        for f in &mut self.features {
            sort_and_cap(&mut f.text, cap);
            sort_and_cap(&mut f.vision, cap);
        }
    }
}

fn activating_tokens(
    item: &DataItem,
    model: &SaeModel<f32>,
    delta: f64,
) -> Result<Vec<(usize, ActivatedToken)>> {
    let z = model.encode_item(item)?.z;
    let mut out = Vec::new();
    for (row, rec) in z.rows().into_iter().zip(&item.records) {
        for (k, &v) in row.iter().enumerate() {
            if (v as f64) > delta {
                out.push((
                    k,
                    ActivatedToken {
                        item_id: item.item_id,
                        token_index: rec.token_index,
                        modality: rec.modality,
                        activation: v,
                        hidden: rec.hidden.clone(),
                    },
                ));
            }
        }
    }
    Ok(out)
}

/// Samples `sample_size` items without replacement (all items when the
/// corpus is smaller), encodes them and records, per feature, every token
/// whose activation exceeds `delta`. Each modality keeps at most
/// `max_tokens_per_feature` strongest tokens.
pub fn collect_activations(
    source: &dyn ItemSource,
    model: &SaeModel<f32>,
    delta: f64,
    sample_size: usize,
    seed: u64,
    max_tokens_per_feature: usize,
) -> Result<FeatureTokenSample> {
    check_delta(delta)?;
    if sample_size == 0 {
        return Err(Error::InvalidArgument(
            "sample_size must be at least 1".into(),
        ));
    }
    if max_tokens_per_feature == 0 {
        return Err(Error::InvalidArgument(
            "max_tokens_per_feature must be at least 1".into(),
        ));
    }
    let mut total = 0usize;
    for item in source.items()? {
        item?;
        total += 1;
    }
    if total == 0 {
        return Err(Error::EmptyInput("corpus has no items to sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = index::sample(&mut rng, total, sample_size.min(total)).into_vec();
    chosen.sort_unstable();

    let mut sample = FeatureTokenSample::new(model.n(), delta, max_tokens_per_feature);
    let mut next = chosen.iter().peekable();
    let mut batch: Vec<DataItem> = Vec::new();
    let flush = |batch: &mut Vec<DataItem>, sample: &mut FeatureTokenSample| -> Result<()> {
        let found: Vec<Result<Vec<(usize, ActivatedToken)>>> = batch
            .par_iter()
            .map(|it| activating_tokens(it, model, delta))
            .collect();
        for toks in found {
            for (k, tok) in toks? {
                sample.push(k, tok);
            }
            sample.sample_size += 1;
        }
        batch.clear();
        Ok(())
    };
    for (i, item) in source.items()?.enumerate() {
        let item = item?;
        if next.peek() == Some(&&i) {
            next.next();
            batch.push(item);
            if batch.len() == 64 {
                flush(&mut batch, &mut sample)?;
            }
        }
        if next.peek().is_none() {
            break;
        }
    }
    flush(&mut batch, &mut sample)?;
    sample.finish();
    Ok(sample)
}
