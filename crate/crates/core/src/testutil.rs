//! Fixtures shared by unit tests.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::corpus::{DataItem, Modality, TokenRecord};
use crate::sae::SaeModel;

/// Encoder and dictionary both the identity, so `z = relu(h)`.
pub fn identity_model(n: usize) -> SaeModel<f32> {
    SaeModel::new(Array2::eye(n), Array1::zeros(n), Array2::eye(n)).unwrap()
}

pub fn item(item_id: u64, tokens: &[(Modality, Vec<f32>)]) -> DataItem {
    let records = tokens
        .iter()
        .enumerate()
        .map(|(j, (modality, hidden))| TokenRecord {
            item_id,
            token_index: j as u32,
            modality: *modality,
            token_id: j as u32,
            hidden: hidden.clone(),
        })
        .collect();
    DataItem::new(item_id, records)
}

/// Random item whose hidden entries are sparse nonnegative values in `[0, 3)`.
pub fn random_item(rng: &mut impl Rng, item_id: u64, n: usize, max_tokens: usize) -> DataItem {
    let len = rng.gen_range(1..=max_tokens);
    let tokens: Vec<(Modality, Vec<f32>)> = (0..len)
        .map(|_| {
            let modality = if rng.gen_bool(0.5) {
                Modality::Text
            } else {
                Modality::Vision
            };
            let hidden = (0..n)
                .map(|_| {
                    if rng.gen_bool(0.3) {
                        rng.gen_range(0.0..3.0f32)
                    } else {
                        0.0
                    }
                })
                .collect();
            (modality, hidden)
        })
        .collect();
    item(item_id, &tokens)
}
