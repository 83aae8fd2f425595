//! Binary shard format.
//!
//! ```text
//! header  : magic "SAEV" | version u32 | d_model u32 | record_count u64
//! record  : item_id u64 | token_index u32 | modality u8 | pad [u8; 3] | token_id u32 | hidden f32[d_model]
//! ```
//!
//! All integers and floats are little-endian. Records of one item are
//! contiguous and ordered by `token_index`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::{DataItem, Modality, TokenRecord};
use crate::{Error, Result};

pub const SHARD_MAGIC: [u8; 4] = *b"SAEV";
pub const SHARD_VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 4 + 4 + 4 + 8;
pub const RECORD_OVERHEAD_BYTES: usize = 8 + 4 + 1 + 3 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShardHeader {
    pub version: u32,
    pub d_model: u32,
    pub record_count: u64,
}

impl ShardHeader {
    pub fn record_bytes(&self) -> usize {
        RECORD_OVERHEAD_BYTES + 4 * self.d_model as usize
    }

    fn encode(&self) -> [u8; HEADER_BYTES] {
        let mut out = [0u8; HEADER_BYTES];
        out[0..4].copy_from_slice(&SHARD_MAGIC);
        out[4..8].copy_from_slice(&self.version.to_le_bytes());
        out[8..12].copy_from_slice(&self.d_model.to_le_bytes());
        out[12..20].copy_from_slice(&self.record_count.to_le_bytes());
        out
    }

    fn decode(bytes: &[u8; HEADER_BYTES]) -> Result<Self> {
        if bytes[0..4] != SHARD_MAGIC {
            return Err(Error::Format(format!(
                "bad shard magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[0..4]),
                "SAEV"
            )));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != SHARD_VERSION {
            return Err(Error::Format(format!(
                "unsupported shard version {version}"
            )));
        }
        let d_model = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if d_model == 0 {
            return Err(Error::Format("shard header declares d_model = 0".into()));
        }
        let record_count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        Ok(Self {
            version,
            d_model,
            record_count,
        })
    }
}

/// Streaming shard writer. The record count in the header is patched on
/// [`ShardWriter::finish`].
pub struct ShardWriter<W: Write + Seek> {
    inner: W,
    d_model: usize,
    count: u64,
    seen: HashSet<u64>,
    buf: Vec<u8>,
}

impl ShardWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, d_model: usize) -> Result<Self> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Self::new(BufWriter::new(file), d_model)
    }
}

impl<W: Write + Seek> ShardWriter<W> {
    pub fn new(mut inner: W, d_model: usize) -> Result<Self> {
        if d_model == 0 || d_model > u32::MAX as usize {
            return Err(Error::InvalidArgument(format!(
                "d_model {d_model} not representable"
            )));
        }
        let header = ShardHeader {
            version: SHARD_VERSION,
            d_model: d_model as u32,
            record_count: 0,
        };
        inner
            .write_all(&header.encode())
            .map_err(|e| Error::io("<shard>", e))?;
        Ok(Self {
            inner,
            d_model,
            count: 0,
            seen: HashSet::new(),
            buf: Vec::with_capacity(RECORD_OVERHEAD_BYTES + 4 * d_model),
        })
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn write_item(&mut self, item: &DataItem) -> Result<()> {
        item.validate(self.d_model)?;
        if !self.seen.insert(item.item_id) {
            return Err(Error::InvalidArgument(format!(
                "item {} written twice; records of an item must be contiguous",
                item.item_id
            )));
        }
        for rec in &item.records {
            self.buf.clear();
            self.buf.extend_from_slice(&rec.item_id.to_le_bytes());
            self.buf.extend_from_slice(&rec.token_index.to_le_bytes());
            self.buf.push(rec.modality.to_byte());
            self.buf.extend_from_slice(&[0u8; 3]);
            self.buf.extend_from_slice(&rec.token_id.to_le_bytes());
            for v in &rec.hidden {
                self.buf.extend_from_slice(&v.to_le_bytes());
            }
            self.inner
                .write_all(&self.buf)
                .map_err(|e| Error::io("<shard>", e))?;
            self.count += 1;
        }
        Ok(())
    }

    /// Patches the record count and flushes. Returns the number of records written.
    pub fn finish(mut self) -> Result<u64> {
        let io = |e| Error::io("<shard>", e);
        self.inner.flush().map_err(io)?;
        self.inner.seek(SeekFrom::Start(12)).map_err(io)?;
        self.inner
            .write_all(&self.count.to_le_bytes())
            .map_err(io)?;
        self.inner.seek(SeekFrom::End(0)).map_err(io)?;
        self.inner.flush().map_err(io)?;
        Ok(self.count)
    }
}

/// Writes `items` to `path`. Every item must carry `d_model`-wide vectors.
pub fn write_shard(path: impl AsRef<Path>, d_model: usize, items: &[DataItem]) -> Result<()> {
    let path = path.as_ref();
    let relabel = |e: Error| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    };
    let mut writer = ShardWriter::create(path, d_model)?;
    for item in items {
        writer.write_item(item).map_err(relabel)?;
    }
    writer.finish().map_err(relabel)?;
    Ok(())
}

/// Reads every item of a shard into memory.
pub fn read_shard(path: impl AsRef<Path>) -> Result<Vec<DataItem>> {
    ShardReader::open(path)?.collect()
}

/// Streaming shard reader yielding one [`DataItem`] at a time.
pub struct ShardReader<R: Read = BufReader<File>> {
    reader: R,
    path: PathBuf,
    header: ShardHeader,
    offset: u64,
    records_read: u64,
    pending: Option<(TokenRecord, u64)>,
    seen: HashSet<u64>,
    buf: Vec<u8>,
    done: bool,
}

impl ShardReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::with_path(BufReader::new(file), path.to_path_buf())
    }
}

impl<R: Read> ShardReader<R> {
    pub fn new(reader: R) -> Result<Self> {
        Self::with_path(reader, PathBuf::from("<stream>"))
    }

    fn with_path(mut reader: R, path: PathBuf) -> Result<Self> {
        let mut head = [0u8; HEADER_BYTES];
        reader.read_exact(&mut head).map_err(|e| match e.kind() {
            ErrorKind::UnexpectedEof => Error::Format("file shorter than shard header".into()),
            _ => Error::io(&path, e),
        })?;
        let header = ShardHeader::decode(&head)?;
        Ok(Self {
            reader,
            path,
            buf: vec![0u8; header.record_bytes()],
            header,
            offset: HEADER_BYTES as u64,
            records_read: 0,
            pending: None,
            seen: HashSet::new(),
            done: false,
        })
    }

    pub fn header(&self) -> ShardHeader {
        self.header
    }

    pub fn d_model(&self) -> usize {
        self.header.d_model as usize
    }

    fn read_record(&mut self) -> Result<Option<(TokenRecord, u64)>> {
        if self.records_read == self.header.record_count {
            let mut probe = [0u8; 1];
            return match self.reader.read(&mut probe) {
                Ok(0) => Ok(None),
                Ok(_) => Err(Error::Corruption {
                    offset: self.offset,
                    reason: format!(
                        "trailing bytes after {} declared records (record width or count disagrees with header)",
                        self.header.record_count
                    ),
                }),
                Err(e) => Err(Error::io(&self.path, e)),
            };
        }
        let start = self.offset;
        if let Err(e) = self.reader.read_exact(&mut self.buf) {
            return Err(match e.kind() {
                ErrorKind::UnexpectedEof => Error::Corruption {
                    offset: start,
                    reason: format!(
                        "truncated record {} of {}",
                        self.records_read, self.header.record_count
                    ),
                },
                _ => Error::io(&self.path, e),
            });
        }
        let b = &self.buf;
        let item_id = u64::from_le_bytes(b[0..8].try_into().unwrap());
        let token_index = u32::from_le_bytes(b[8..12].try_into().unwrap());
        let modality = Modality::from_byte(b[12]).ok_or_else(|| Error::Corruption {
            offset: start + 12,
            reason: format!("invalid modality byte {}", b[12]),
        })?;
        if b[13..16] != [0, 0, 0] {
            return Err(Error::Corruption {
                offset: start + 13,
                reason: "nonzero padding".into(),
            });
        }
        let token_id = u32::from_le_bytes(b[16..20].try_into().unwrap());
        let hidden: Vec<f32> = b[RECORD_OVERHEAD_BYTES..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(pos) = hidden.iter().position(|v| !v.is_finite()) {
            return Err(Error::Corruption {
                offset: start + (RECORD_OVERHEAD_BYTES + 4 * pos) as u64,
                reason: "non-finite activation".into(),
            });
        }
        self.offset += self.buf.len() as u64;
        self.records_read += 1;
        Ok(Some((
            TokenRecord {
                item_id,
                token_index,
                modality,
                token_id,
                hidden,
            },
            start,
        )))
    }

    fn next_item(&mut self) -> Result<Option<DataItem>> {
        let (first, first_offset) = match self.pending.take() {
            Some(p) => p,
            None => match self.read_record()? {
                Some(p) => p,
                None => return Ok(None),
            },
        };
        if !self.seen.insert(first.item_id) {
            return Err(Error::Corruption {
                offset: first_offset,
                reason: format!("records of item {} are not contiguous", first.item_id),
            });
        }
        if first.token_index != 0 {
            return Err(Error::Corruption {
                offset: first_offset + 8,
                reason: format!(
                    "item {} starts at token_index {}",
                    first.item_id, first.token_index
                ),
            });
        }
        let mut item = DataItem::new(first.item_id, vec![first]);
        while let Some((rec, off)) = self.read_record()? {
            if rec.item_id != item.item_id {
                self.pending = Some((rec, off));
                break;
            }
            if rec.token_index as usize != item.records.len() {
                return Err(Error::Corruption {
                    offset: off + 8,
                    reason: format!(
                        "item {}: expected token_index {}, found {}",
                        item.item_id,
                        item.records.len(),
                        rec.token_index
                    ),
                });
            }
            item.records.push(rec);
        }
        Ok(Some(item))
    }
}

impl<R: Read> Iterator for ShardReader<R> {
    type Item = Result<DataItem>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_item() {
            Ok(Some(item)) => Some(Ok(item)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}
