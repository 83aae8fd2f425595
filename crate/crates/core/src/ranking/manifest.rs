use std::cmp::Ordering;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RankMethod;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedEntry {
    pub item_id: u64,
    pub score: f64,
    /// Position of the item in the scored input.
    pub position: usize,
}

/// Items ordered by non-increasing score; ties keep input order.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedManifest {
    pub method: RankMethod,
    pub entries: Vec<RankedEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    item_id: u64,
    score: f64,
    rank: usize,
    method: RankMethod,
}

impl RankedManifest {
    pub fn from_unsorted(method: RankMethod, mut entries: Vec<RankedEntry>) -> Self {
        entries.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then(a.position.cmp(&b.position))
        });
        Self { method, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn item_ids(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.item_id).collect()
    }

    /// One JSON object per line: `item_id`, `score`, `rank` (1-based), `method`.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            let line = ManifestLine {
                item_id: e.item_id,
                score: e.score,
                rank: i + 1,
                method: self.method,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(input: impl BufRead) -> Result<Self> {
        let mut lines: Vec<ManifestLine> = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<manifest>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ManifestLine = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("manifest line {}: {e}", i + 1)))?;
            lines.push(parsed);
        }
        let method = match lines.first() {
            Some(l) => l.method,
            None => return Err(Error::EmptyInput("manifest has no entries")),
        };
        lines.sort_by_key(|l| l.rank);
        let mut entries = Vec::with_capacity(lines.len());
        for (i, l) in lines.into_iter().enumerate() {
            if l.rank != i + 1 {
                return Err(Error::Format(format!(
                    "manifest ranks are not 1..N (found {} at {})",
                    l.rank,
                    i + 1
                )));
            }
            if l.method != method {
                return Err(Error::Format("manifest mixes ranking methods".into()));
            }
            entries.push(RankedEntry {
                item_id: l.item_id,
                score: l.score,
                position: i,
            });
        }
        Ok(Self { method, entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(std::io::BufReader::new(file))
    }
}

/// Ids of the top `floor(retention * N)` items.
pub fn filter_manifest(manifest: &RankedManifest, retention: f64) -> Result<Vec<u64>> {
    if !(0.0..=1.0).contains(&retention) {
        return Err(Error::InvalidArgument(format!(
            "retention {retention} not in [0, 1]"
        )));
    }
    let keep = retained_count(retention, manifest.len());
    Ok(manifest.entries[..keep].iter().map(|e| e.item_id).collect())
}

/// `floor(fraction * count)`, tolerant of representation error in `fraction`
/// (0.29 * 100 keeps 29).
pub(crate) fn retained_count(fraction: f64, count: usize) -> usize {
    ((fraction * count as f64 + 1e-9).floor() as usize).min(count)
}
