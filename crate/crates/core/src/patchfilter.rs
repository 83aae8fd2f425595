//! Per-patch relevance scores for the vision tokens of one item, and the
//! top-scoring patch masks derived from them.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{DataItem, Modality};
use crate::ranking::{check_delta, CrossModalWeights, ItemFeatures};
use crate::sae::SaeModel;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PatchMethod {
    /// Count of features above the bound.
    L0,
    /// Sum of activations.
    L1,
    /// Count restricted to the item's co-occurring features.
    Cooccur,
    /// Sum of positive cross-modal weights of co-occurring features above the bound.
    Cosine,
}

impl PatchMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            PatchMethod::L0 => "l0",
            PatchMethod::L1 => "l1",
            PatchMethod::Cooccur => "cooccur",
            PatchMethod::Cosine => "cosine",
        }
    }

    fn needs_both_modalities(self) -> bool {
        matches!(self, PatchMethod::Cooccur | PatchMethod::Cosine)
    }
}

impl std::fmt::Display for PatchMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchScores {
    pub item_id: u64,
    pub method: PatchMethod,
    pub delta: f64,
    /// `(token_index, score)` for every vision token, in token order.
    pub scores: Vec<(u32, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchMask {
    pub item_id: u64,
    pub gamma: f64,
    pub method: PatchMethod,
    /// Kept vision token indices, ascending.
    pub kept: Vec<u32>,
}

pub fn score_patches(
    item: &DataItem,
    model: &SaeModel<f32>,
    method: PatchMethod,
    delta: f64,
    weights: Option<&CrossModalWeights>,
) -> Result<PatchScores> {
    check_delta(delta)?;
    if !item.has_modality(Modality::Vision) {
        return Err(Error::Precondition(format!(
            "item {} has no vision tokens",
            item.item_id
        )));
    }
    if method.needs_both_modalities() && !item.has_modality(Modality::Text) {
        return Err(Error::Precondition(format!(
            "{method} patch scores need text tokens, item {} has none",
            item.item_id
        )));
    }
    let omega = match method {
        PatchMethod::Cosine => {
            let w = weights.ok_or(Error::MissingInput(
                "cosine patch scores need cross-modal weights",
            ))?;
            if w.omega.len() != model.n() {
                return Err(Error::dim(
                    "cross-modal weight count",
                    model.n(),
                    w.omega.len(),
                ));
            }
            Some(&w.omega)
        }
        _ => None,
    };

    let z = model.encode_item(item)?.z;
    let modalities: Vec<Modality> = item.records.iter().map(|r| r.modality).collect();
    let mut in_f = vec![false; model.n()];
    if method.needs_both_modalities() {
        for k in ItemFeatures::from_activations(z.view(), &modalities, delta).cooccurring {
            in_f[k] = true;
        }
    }

    let mut scores = Vec::with_capacity(item.vision_count());
    for (row, rec) in z.rows().into_iter().zip(&item.records) {
        if rec.modality != Modality::Vision {
            continue;
        }
        let above =
            |k: usize, v: f32| (v as f64) > delta && (!method.needs_both_modalities() || in_f[k]);
        let score: f64 = match method {
            PatchMethod::L1 => row.iter().map(|&v| v as f64).sum(),
            PatchMethod::L0 | PatchMethod::Cooccur => row
                .iter()
                .enumerate()
                .filter(|&(k, &v)| above(k, v))
                .count() as f64,
            PatchMethod::Cosine => {
                let omega = omega.expect("checked above");
                row.iter()
                    .enumerate()
                    .filter(|&(k, &v)| above(k, v) && omega[k] > 0.0)
                    .map(|(k, _)| omega[k])
                    .sum()
            }
        };
        scores.push((rec.token_index, 0.0 + score));
    }
    Ok(PatchScores {
        item_id: item.item_id,
        method,
        delta,
        scores,
    })
}

/// Keeps the `floor(gamma * count)` highest-scoring patches, lower
/// token index first among equal scores.
pub fn make_mask(scores: &PatchScores, gamma: f64) -> Result<PatchMask> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!(
            "gamma {gamma} not in [0, 1]"
        )));
    }
    let keep = crate::ranking::retained_count(gamma, scores.scores.len());
    let mut order: Vec<(u32, f64)> = scores.scores.clone();
    order.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    let mut kept: Vec<u32> = order[..keep].iter().map(|p| p.0).collect();
    kept.sort_unstable();
    Ok(PatchMask {
        item_id: scores.item_id,
        gamma,
        method: scores.method,
        kept,
    })
}

pub fn write_mask_jsonl(mut out: impl Write, masks: &[PatchMask]) -> std::io::Result<()> {
    for m in masks {
        serde_json::to_writer(&mut out, m)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// CSV rows `item_id,token_index,method,score`.
pub fn write_score_table(out: impl Write, all: &[PatchScores]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["item_id", "token_index", "method", "score"])?;
    for s in all {
        for &(idx, score) in &s.scores {
            w.write_record([
                s.item_id.to_string(),
                idx.to_string(),
                s.method.to_string(),
                score.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::corpus::Modality::{Text, Vision};
    use crate::testutil::{identity_model, item, random_item};

    const ALL: [PatchMethod; 4] = [
        PatchMethod::L0,
        PatchMethod::L1,
        PatchMethod::Cooccur,
        PatchMethod::Cosine,
    ];

    fn ones(n: usize) -> CrossModalWeights {
        CrossModalWeights {
            delta: 1.0,
            top_k: 5,
            sample_size: 1,
            omega: vec![1.0; n],
        }
    }

    fn fixed(scores: &[f64]) -> PatchScores {
        PatchScores {
            item_id: 0,
            method: PatchMethod::L1,
            delta: 1.0,
            scores: scores
                .iter()
                .enumerate()
                .map(|(i, &s)| (i as u32 + 10, s))
                .collect(),
        }
    }

    fn two_modal_item(rng: &mut impl Rng, n: usize) -> DataItem {
        loop {
            let it = random_item(rng, 1, n, 10);
            if it.has_modality(Text) && it.has_modality(Vision) {
                return it;
            }
        }
    }

    #[test]
    fn hand_example() {
        let it = item(
            3,
            &[
                (Text, vec![2.0, 0.0, 0.0]),
                (Vision, vec![2.0, 3.0, 0.5]),
                (Vision, vec![0.0, 1.5, 0.0]),
            ],
        );
        let model = identity_model(3);
        let w = CrossModalWeights {
            delta: 1.0,
            top_k: 5,
            sample_size: 1,
            omega: vec![0.4, -0.9, 0.8],
        };
        let get = |m| score_patches(&it, &model, m, 1.0, Some(&w)).unwrap().scores;
        assert_eq!(get(PatchMethod::L0), vec![(1, 2.0), (2, 1.0)]);
        assert_eq!(get(PatchMethod::L1), vec![(1, 5.5), (2, 1.5)]);
        assert_eq!(get(PatchMethod::Cooccur), vec![(1, 1.0), (2, 0.0)]);
        assert_eq!(get(PatchMethod::Cosine), vec![(1, 0.4), (2, 0.0)]);
    }

    #[test]
    fn negative_weights_are_excluded() {
        let it = item(1, &[(Text, vec![2.0, 2.0]), (Vision, vec![2.0, 2.0])]);
        let w = CrossModalWeights {
            delta: 1.0,
            top_k: 5,
            sample_size: 1,
            omega: vec![-0.5, 0.25],
        };
        let s = score_patches(&it, &identity_model(2), PatchMethod::Cosine, 1.0, Some(&w)).unwrap();
        assert_eq!(s.scores, vec![(1, 0.25)]);
    }

    #[test]
    fn preconditions() {
        let model = identity_model(2);
        let text_only = item(1, &[(Text, vec![2.0, 0.0])]);
        let vision_only = item(2, &[(Vision, vec![2.0, 0.0])]);
        for m in ALL {
            assert!(matches!(
                score_patches(&text_only, &model, m, 1.0, Some(&ones(2))),
                Err(Error::Precondition(_))
            ));
        }
        assert!(score_patches(&vision_only, &model, PatchMethod::L0, 1.0, None).is_ok());
        assert!(score_patches(&vision_only, &model, PatchMethod::L1, 1.0, None).is_ok());
        assert!(matches!(
            score_patches(&vision_only, &model, PatchMethod::Cooccur, 1.0, None),
            Err(Error::Precondition(_))
        ));
        let both = item(3, &[(Text, vec![2.0, 0.0]), (Vision, vec![2.0, 0.0])]);
        assert!(matches!(
            score_patches(&both, &model, PatchMethod::Cosine, 1.0, None),
            Err(Error::MissingInput(_))
        ));
        assert!(matches!(
            score_patches(&both, &model, PatchMethod::Cosine, 1.0, Some(&ones(3))),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn zero_encoder_gives_zero_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let it = two_modal_item(&mut rng, 4);
        let model = SaeModel::<f32>::zeros(6, 4);
        for m in ALL {
            let s = score_patches(&it, &model, m, 0.0, Some(&ones(6))).unwrap();
            assert!(s.scores.iter().all(|p| p.1 == 0.0), "{m}");
        }
    }

    #[test]
    fn mask_examples() {
        let s = fixed(&[3.0, 1.0, 2.0, 0.0]);
        assert_eq!(make_mask(&s, 0.25).unwrap().kept, vec![10]);
        assert_eq!(make_mask(&s, 0.5).unwrap().kept, vec![10, 12]);
        assert_eq!(make_mask(&s, 1.0).unwrap().kept, vec![10, 11, 12, 13]);
        assert!(make_mask(&s, 0.0).unwrap().kept.is_empty());
        assert!(make_mask(&s, 1.01).is_err());
        assert!(make_mask(&s, -0.1).is_err());
        let ties = fixed(&[1.0, 2.0, 2.0, 2.0]);
        assert_eq!(make_mask(&ties, 0.5).unwrap().kept, vec![11, 12]);
        let three = fixed(&[0.0; 100]);
        assert_eq!(make_mask(&three, 0.29).unwrap().kept.len(), 29);
    }

    #[test]
    fn mask_jsonl_shape() {
        let m = make_mask(&fixed(&[3.0, 1.0]), 0.5).unwrap();
        let mut buf = Vec::new();
        write_mask_jsonl(&mut buf, &[m]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "{\"item_id\":0,\"gamma\":0.5,\"method\":\"l1\",\"kept\":[10]}\n"
        );
        let mut csv = Vec::new();
        write_score_table(&mut csv, &[fixed(&[0.5])]).unwrap();
        assert_eq!(
            String::from_utf8(csv).unwrap(),
            "item_id,token_index,method,score\n0,10,l1,0.5\n"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn score_relations(seed in any::<u64>(), delta in 0.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 8;
            let it = two_modal_item(&mut rng, n);
            let model = identity_model(n);
            let w = ones(n);
            let get = |m| score_patches(&it, &model, m, delta, Some(&w)).unwrap();
            let (l0, l1, co, cos) = (get(PatchMethod::L0), get(PatchMethod::L1), get(PatchMethod::Cooccur), get(PatchMethod::Cosine));
            prop_assert_eq!(&cos.scores, &co.scores);
            prop_assert_eq!(l0.scores.len(), it.vision_count());
            for i in 0..l0.scores.len() {
                prop_assert!(co.scores[i].1 <= l0.scores[i].1);
                prop_assert!(l1.scores[i].1 >= delta * l0.scores[i].1 - 1e-9);
                prop_assert!(l0.scores[i].1 >= 0.0 && l1.scores[i].1 >= 0.0);
            }
        }

        #[test]
        fn masks_nest(scores in prop::collection::vec(0u8..4, 0..40)) {
            let s = fixed(&scores.iter().map(|&v| v as f64).collect::<Vec<_>>());
            let masks: Vec<Vec<u32>> = [0.0, 0.25, 0.5, 0.75, 1.0]
                .iter()
                .map(|&g| make_mask(&s, g).unwrap().kept)
                .collect();
            prop_assert!(masks[0].is_empty());
            prop_assert_eq!(masks[4].len(), scores.len());
            for pair in masks.windows(2) {
                prop_assert!(pair[0].iter().all(|i| pair[1].contains(i)));
            }
            for (g, m) in [0.25, 0.5, 0.75].iter().zip(&masks[1..4]) {
                prop_assert_eq!(m.len(), (g * scores.len() as f64 + 1e-9).floor() as usize);
            }
        }

        #[test]
        fn text_permutation_leaves_vision_scores(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let it = two_modal_item(&mut rng, 6);
            let mut perm = it.clone();
            let text_slots: Vec<usize> = (0..it.len()).filter(|&j| it.records[j].modality == Text).collect();
            let mut hidden: Vec<Vec<f32>> = text_slots.iter().map(|&j| it.records[j].hidden.clone()).collect();
            hidden.reverse();
            for (&j, h) in text_slots.iter().zip(hidden) {
                perm.records[j].hidden = h;
            }
            let model = identity_model(6);
            for m in [PatchMethod::L0, PatchMethod::L1] {
                prop_assert_eq!(
                    score_patches(&it, &model, m, 1.0, None).unwrap(),
                    score_patches(&perm, &model, m, 1.0, None).unwrap()
                );
            }
        }
    }
}
