//! Model file: magic "SAEM" | version u32 | m u32 | n u32 | w_enc f32[n·m]
//! | b_enc f32[n] | dictionary f32[n·m], little-endian, row-major.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

use super::SaeModel;
use crate::{Error, Result};

pub const MODEL_MAGIC: [u8; 4] = *b"SAEM";
pub const MODEL_VERSION: u32 = 1;
const MODEL_HEADER_BYTES: usize = 16;

impl SaeModel<f32> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let (n, m) = (self.n(), self.m());
        let mut out = Vec::with_capacity(MODEL_HEADER_BYTES + 4 * (2 * n * m + n));
        out.extend_from_slice(&MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(m as u32).to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        for v in self.w_enc.iter().chain(&self.b_enc).chain(&self.dictionary) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MODEL_HEADER_BYTES {
            return Err(Error::Format("model file shorter than header".into()));
        }
        if bytes[0..4] != MODEL_MAGIC {
            return Err(Error::Format("bad model magic, expected \"SAEM\"".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = word(4);
        if version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "unsupported model version {version}"
            )));
        }
        let (m, n) = (word(8) as usize, word(12) as usize);
        let expected = MODEL_HEADER_BYTES + 4 * (2 * n * m + n);
        if bytes.len() != expected {
            return Err(Error::Corruption {
                offset: bytes.len().min(expected) as u64,
                reason: format!(
                    "model payload is {} bytes, header implies {expected}",
                    bytes.len()
                ),
            });
        }
        let mut floats = bytes[MODEL_HEADER_BYTES..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let w_enc = Array2::from_shape_vec((n, m), floats.by_ref().take(n * m).collect()).unwrap();
        let b_enc = Array1::from_vec(floats.by_ref().take(n).collect());
        let dictionary = Array2::from_shape_vec((n, m), floats.collect()).unwrap();
        Self::new(w_enc, b_enc, dictionary)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized model, hex encoded.
    pub fn fingerprint(&self) -> String {
        Sha256::digest(self.to_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
