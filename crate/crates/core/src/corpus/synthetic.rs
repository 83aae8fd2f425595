//! Planted-dictionary corpus generator.
//!
//! Every hidden vector is a positive combination of `sparsity` unit-norm
//! planted atoms plus isotropic Gaussian noise, so the true sparse code of
//! each token is known exactly. Atoms are split into three pools: shared
//! (fire on both modalities), text-only and vision-only.

use ndarray::{Array1, Array2};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataItem, Modality, TokenRecord};
use crate::{Error, Result};

/// Text token ids are drawn from `0..TEXT_VOCAB_SIZE`.
pub const TEXT_VOCAB_SIZE: u32 = 32000;
/// Vision token ids are drawn from `TEXT_VOCAB_SIZE..TEXT_VOCAB_SIZE + VISION_VOCAB_SIZE`.
pub const VISION_VOCAB_SIZE: u32 = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub d_model: usize,
    pub planted_features: usize,
    pub sparsity: usize,
    pub items: usize,
    pub tokens_per_item: usize,
    pub vision_fraction: f64,
    pub noise_std: f64,
    pub seed: u64,
    /// Number of planted atoms that may fire on both modalities.
    pub shared_features: usize,
    /// Code coefficients are drawn uniformly from `[coef_min, coef_max]`.
    pub coef_min: f64,
    pub coef_max: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            d_model: 64,
            planted_features: 32,
            sparsity: 5,
            items: 200,
            tokens_per_item: 16,
            vision_fraction: 0.5,
            noise_std: 0.01,
            seed: 42,
            shared_features: 8,
            coef_min: 0.5,
            coef_max: 1.5,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.d_model == 0 || self.planted_features == 0 || self.sparsity == 0 {
            return bad("d_model, planted_features and sparsity must be positive".into());
        }
        if self.items == 0 || self.tokens_per_item == 0 {
            return bad("items and tokens_per_item must be positive".into());
        }
        if self.sparsity > self.planted_features {
            return bad(format!(
                "sparsity {} exceeds planted_features {}",
                self.sparsity, self.planted_features
            ));
        }
        if !(0.0..=1.0).contains(&self.vision_fraction) {
            return bad(format!(
                "vision_fraction {} not in [0, 1]",
                self.vision_fraction
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!(
                "noise_std {} must be finite and >= 0",
                self.noise_std
            ));
        }
        if !(self.coef_min > 0.0 && self.coef_min <= self.coef_max && self.coef_max.is_finite()) {
            return bad(format!(
                "coefficient range [{}, {}] must be positive and ordered",
                self.coef_min, self.coef_max
            ));
        }
        if self.shared_features > self.planted_features {
            return bad("shared_features exceeds planted_features".into());
        }
        let vision_tokens = self.vision_tokens_per_item();
        let (text_pool, vision_pool) = self.pools();
        if vision_tokens < self.tokens_per_item && text_pool.len() < self.sparsity {
            return bad(format!(
                "text atom pool {} smaller than sparsity",
                text_pool.len()
            ));
        }
        if vision_tokens > 0 && vision_pool.len() < self.sparsity {
            return bad(format!(
                "vision atom pool {} smaller than sparsity",
                vision_pool.len()
            ));
        }
        Ok(())
    }

    /// First `ceil(vision_fraction * l)` tokens of every item are vision tokens.
    pub fn vision_tokens_per_item(&self) -> usize {
        ((self.vision_fraction * self.tokens_per_item as f64).ceil() as usize)
            .min(self.tokens_per_item)
    }

    /// Atom indices usable by text tokens and by vision tokens. The first
    /// `shared_features` atoms appear in both pools; the remainder is split
    /// in half between text and vision.
    pub fn pools(&self) -> (Vec<usize>, Vec<usize>) {
        let shared = self.shared_features;
        let exclusive = self.planted_features - shared;
        let text_only = exclusive - exclusive / 2;
        let text: Vec<usize> = (0..shared + text_only).collect();
        let vision: Vec<usize> = (0..shared)
            .chain(shared + text_only..self.planted_features)
            .collect();
        (text, vision)
    }
}

/// Generated corpus plus the ground truth used to build it.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub items: Vec<DataItem>,
    /// `planted_features × d_model`, unit-norm rows, every entry exactly
    /// representable as `f32`.
    pub dictionary: Array2<f64>,
    /// `codes[i][j]` lists the `(atom, coefficient)` pairs of token `j` of item `i`.
    pub codes: Vec<Vec<Vec<(usize, f64)>>>,
}

impl SyntheticCorpus {
    /// Noise-free `Σ c·f` vector of a token, computed in double precision.
    pub fn clean_vector(&self, item: usize, token: usize) -> Array1<f64> {
        let mut v = Array1::<f64>::zeros(self.dictionary.ncols());
        for &(k, c) in &self.codes[item][token] {
            v.scaled_add(c, &self.dictionary.row(k));
        }
        v
    }

    pub fn d_model(&self) -> usize {
        self.dictionary.ncols()
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let m = spec.d_model;

    let mut dictionary = Array2::<f64>::zeros((spec.planted_features, m));
    for mut row in dictionary.rows_mut() {
        loop {
            row.mapv_inplace(|_| StandardNormal.sample(&mut rng));
            let norm = row.dot(&row).sqrt();
            if norm > 1e-6 {
                row.mapv_inplace(|v| ((v / norm) as f32) as f64);
                break;
            }
        }
    }

    let (text_pool, vision_pool) = spec.pools();
    let vision_tokens = spec.vision_tokens_per_item();
    let noise = (spec.noise_std > 0.0).then(|| Normal::new(0.0, spec.noise_std).unwrap());

    let mut items = Vec::with_capacity(spec.items);
    let mut codes = Vec::with_capacity(spec.items);
    for i in 0..spec.items {
        let item_id = i as u64;
        let mut records = Vec::with_capacity(spec.tokens_per_item);
        let mut item_codes = Vec::with_capacity(spec.tokens_per_item);
        for j in 0..spec.tokens_per_item {
            let (modality, pool) = if j < vision_tokens {
                (Modality::Vision, &vision_pool)
            } else {
                (Modality::Text, &text_pool)
            };
            let mut code: Vec<(usize, f64)> = index::sample(&mut rng, pool.len(), spec.sparsity)
                .into_iter()
                .map(|p| {
                    let c = if spec.coef_min == spec.coef_max {
                        spec.coef_min
                    } else {
                        rng.gen_range(spec.coef_min..=spec.coef_max)
                    };
                    (pool[p], c)
                })
                .collect();
            code.sort_by_key(|&(k, _)| k);

            let mut v = vec![0.0f64; m];
            for &(k, c) in &code {
                for (acc, f) in v.iter_mut().zip(dictionary.row(k)) {
                    *acc += c * f;
                }
            }
            if let Some(noise) = &noise {
                for acc in v.iter_mut() {
                    *acc += noise.sample(&mut rng);
                }
            }
            let token_id = match modality {
                Modality::Text => rng.gen_range(0..TEXT_VOCAB_SIZE),
                Modality::Vision => TEXT_VOCAB_SIZE + rng.gen_range(0..VISION_VOCAB_SIZE),
            };
            records.push(TokenRecord {
                item_id,
                token_index: j as u32,
                modality,
                token_id,
                hidden: v.into_iter().map(|x| x as f32).collect(),
            });
            item_codes.push(code);
        }
        items.push(DataItem::new(item_id, records));
        codes.push(item_codes);
    }
    Ok(SyntheticCorpus {
        items,
        dictionary,
        codes,
    })
}
