//! Activation corpus: token records, shard files and item sources.

mod shard;
mod source;
mod synthetic;

pub use shard::{
    read_shard, write_shard, ShardHeader, ShardReader, ShardWriter, HEADER_BYTES,
    RECORD_OVERHEAD_BYTES, SHARD_MAGIC, SHARD_VERSION,
};
pub use source::{ItemIter, ItemSource, ShardSet};
pub use synthetic::{
    generate_synthetic, SyntheticCorpus, SyntheticSpec, TEXT_VOCAB_SIZE, VISION_VOCAB_SIZE,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Vision,
}

impl Modality {
    pub fn to_byte(self) -> u8 {
        match self {
            Modality::Text => 0,
            Modality::Vision => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Modality::Text),
            1 => Some(Modality::Vision),
            _ => None,
        }
    }
}

/// One token of one data item together with its residual-stream activation.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenRecord {
    pub item_id: u64,
    pub token_index: u32,
    pub modality: Modality,
    pub token_id: u32,
    pub hidden: Vec<f32>,
}

/// All tokens of a single data item, in position order.
#[derive(Debug, Clone, PartialEq)]
pub struct DataItem {
    pub item_id: u64,
    pub records: Vec<TokenRecord>,
}

impl DataItem {
    pub fn new(item_id: u64, records: Vec<TokenRecord>) -> Self {
        Self { item_id, records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn has_modality(&self, modality: Modality) -> bool {
        self.records.iter().any(|r| r.modality == modality)
    }

    pub fn vision_count(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.modality == Modality::Vision)
            .count()
    }

    /// Hidden vectors stacked as an `l × m` matrix.
    pub fn hidden_matrix(&self, d_model: usize) -> Result<ndarray::Array2<f32>> {
        let mut h = ndarray::Array2::<f32>::zeros((self.records.len(), d_model));
        for (mut row, rec) in h.rows_mut().into_iter().zip(&self.records) {
            if rec.hidden.len() != d_model {
                return Err(Error::dim("token hidden vector", d_model, rec.hidden.len()));
            }
            row.assign(&ndarray::ArrayView1::from(&rec.hidden[..]));
        }
        Ok(h)
    }

    /// Checks the structural invariants every stored item must satisfy.
    pub fn validate(&self, d_model: usize) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "item {} has no tokens",
                self.item_id
            )));
        }
        for (j, rec) in self.records.iter().enumerate() {
            if rec.item_id != self.item_id {
                return Err(Error::InvalidArgument(format!(
                    "record {j} of item {} carries item_id {}",
                    self.item_id, rec.item_id
                )));
            }
            if rec.token_index as usize != j {
                return Err(Error::InvalidArgument(format!(
                    "item {}: token_index {} at position {j}",
                    self.item_id, rec.token_index
                )));
            }
            if rec.hidden.len() != d_model {
                return Err(Error::dim("token hidden vector", d_model, rec.hidden.len()));
            }
            if rec.hidden.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "item {} token {j}: non-finite activation",
                    self.item_id
                )));
            }
        }
        Ok(())
    }
}
