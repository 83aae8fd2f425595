//! Token batches drawn from a shuffling reservoir.
//!
//! The reservoir is refilled sequentially from the item source, cycling
//! over it as often as needed, shuffled, and the first half is handed out
//! as batches. The second half stays behind and mixes with the next refill.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ItemIter, ItemSource};
use crate::{Error, Result};

pub struct TokenBuffer<'a> {
    source: &'a dyn ItemSource,
    iter: ItemIter<'a>,
    d_model: usize,
    batch_size: usize,
    capacity: usize,
    /// Row-major `len × d_model`.
    data: Vec<f32>,
    len: usize,
    /// Start of the next batch inside the handed-out region.
    cursor: usize,
    /// End of the handed-out region.
    ready: usize,
    tokens_this_pass: usize,
    rng: ChaCha8Rng,
}

impl<'a> TokenBuffer<'a> {
    pub fn new(
        source: &'a dyn ItemSource,
        batch_size: usize,
        buffer_batches: usize,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        let mut iter = source.items()?;
        // Peek the first item to learn the input width.
        let first = iter
            .next()
            .ok_or(Error::EmptyInput("training corpus has no items"))??;
        let d_model = first
            .records
            .first()
            .map(|r| r.hidden.len())
            .ok_or(Error::EmptyInput("training corpus item has no tokens"))?;
        let capacity = batch_size * buffer_batches.max(2);
        let iter: ItemIter<'a> = Box::new(std::iter::once(Ok(first)).chain(iter));
        Ok(Self {
            source,
            iter,
            d_model,
            batch_size,
            capacity,
            data: Vec::with_capacity(capacity * d_model),
            len: 0,
            cursor: 0,
            ready: 0,
            tokens_this_pass: 0,
            rng,
        })
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    fn refill(&mut self) -> Result<()> {
        while self.len < self.capacity {
            let item = match self.iter.next() {
                Some(item) => item?,
                None => {
                    if self.tokens_this_pass == 0 {
                        return Err(Error::EmptyInput("training corpus has no tokens"));
                    }
                    self.iter = self.source.items()?;
                    self.tokens_this_pass = 0;
                    continue;
                }
            };
            for rec in &item.records {
                if rec.hidden.len() != self.d_model {
                    return Err(Error::dim(
                        "training token width",
                        self.d_model,
                        rec.hidden.len(),
                    ));
                }
                if self.len == self.capacity {
                    // Overflowing tokens of a long item are dropped for this
                    // pass; the next pass starts at a fresh item.
                    break;
                }
                self.data.extend_from_slice(&rec.hidden);
                self.len += 1;
                self.tokens_this_pass += 1;
            }
        }
        Ok(())
    }

    fn shuffle(&mut self) {
        let m = self.d_model;
        for i in (1..self.len).rev() {
            let j = self.rng.gen_range(0..=i);
            if i != j {
                let (lo, hi) = self.data.split_at_mut(i * m);
                lo[j * m..(j + 1) * m].swap_with_slice(&mut hi[..m]);
            }
        }
    }

    pub fn next_batch(&mut self) -> Result<Array2<f32>> {
        if self.cursor + self.batch_size > self.ready {
            // Discard the handed-out region and top up.
            let m = self.d_model;
            self.data.drain(..self.ready * m);
            self.len -= self.ready;
            self.refill()?;
            self.shuffle();
            self.cursor = 0;
            let half = (self.len / 2 / self.batch_size).max(1) * self.batch_size;
            self.ready = half.min(self.len);
        }
        let m = self.d_model;
        let start = self.cursor * m;
        let end = start + self.batch_size * m;
        self.cursor += self.batch_size;
        Ok(Array2::from_shape_vec((self.batch_size, m), self.data[start..end].to_vec()).unwrap())
    }
}
