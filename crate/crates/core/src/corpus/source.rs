use std::path::{Path, PathBuf};

use super::{DataItem, ShardReader};
use crate::{Error, Result};

pub type ItemIter<'a> = Box<dyn Iterator<Item = Result<DataItem>> + 'a>;

/// Anything that can be streamed as a sequence of data items, possibly
/// more than once.
pub trait ItemSource {
    /// Starts a fresh pass over the items, in a fixed order.
    fn items(&self) -> Result<ItemIter<'_>>;

    /// Human-readable identifiers of the underlying shards.
    fn source_ids(&self) -> Vec<String> {
        vec!["<memory>".to_string()]
    }
}

impl ItemSource for [DataItem] {
    fn items(&self) -> Result<ItemIter<'_>> {
        Ok(Box::new(self.iter().cloned().map(Ok)))
    }
}

impl ItemSource for Vec<DataItem> {
    fn items(&self) -> Result<ItemIter<'_>> {
        self.as_slice().items()
    }
}

/// An ordered list of shard files read back to back.
///
/// All shards must declare the same `d_model`.
#[derive(Debug, Clone)]
pub struct ShardSet {
    paths: Vec<PathBuf>,
}

impl ShardSet {
    pub fn new<P: AsRef<Path>>(paths: impl IntoIterator<Item = P>) -> Self {
        Self {
            paths: paths
                .into_iter()
                .map(|p| p.as_ref().to_path_buf())
                .collect(),
        }
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.paths
    }

    /// Shared `d_model` of all shards, read from the headers only.
    pub fn d_model(&self) -> Result<usize> {
        let mut d = None;
        for p in &self.paths {
            let m = ShardReader::open(p)?.d_model();
            match d {
                None => d = Some(m),
                Some(prev) if prev != m => return Err(Error::dim("shard d_model", prev, m)),
                _ => {}
            }
        }
        d.ok_or(Error::EmptyInput("no shard paths given"))
    }
}

impl ItemSource for ShardSet {
    fn items(&self) -> Result<ItemIter<'_>> {
        self.d_model()?;
        let iter = self.paths.iter().flat_map(|p| -> ItemIter<'_> {
            match ShardReader::open(p) {
                Ok(r) => Box::new(r),
                Err(e) => Box::new(std::iter::once(Err(e))),
            }
        });
        Ok(Box::new(iter))
    }

    fn source_ids(&self) -> Vec<String> {
        self.paths.iter().map(|p| p.display().to_string()).collect()
    }
}
