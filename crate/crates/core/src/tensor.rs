//! Batched containers passed between the encoder, the pruner and the decoder.

use crate::error::{Error, Result};
use crate::tokens::PAD;

/// Binary attention mask, `1` for real tokens and `0` for padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub batch: usize,
    pub seq: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn ones(batch: usize, seq: usize) -> Self {
        Mask {
            batch,
            seq,
            data: vec![1; batch * seq],
        }
    }

    pub fn row(&self, b: usize) -> &[u8] {
        &self.data[b * self.seq..(b + 1) * self.seq]
    }

    pub fn unmasked(&self, b: usize) -> usize {
        self.row(b).iter().filter(|&&m| m != 0).count()
    }
}

/// Right-padded token ids with their mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBatch {
    pub ids: Vec<u32>,
    pub mask: Mask,
}

impl TokenBatch {
    /// Pad variable-length rows on the right to the longest one.
    pub fn from_rows<R: AsRef<[u32]>>(rows: &[R]) -> Result<Self> {
        Self::from_rows_padded(rows, 0)
    }

    /// As [`from_rows`](Self::from_rows), padding to at least `min_len`.
    pub fn from_rows_padded<R: AsRef<[u32]>>(rows: &[R], min_len: usize) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let seq = rows
            .iter()
            .map(|r| r.as_ref().len())
            .max()
            .unwrap_or(0)
            .max(min_len);
        let mut ids = vec![PAD; rows.len() * seq];
        let mut mask = vec![0u8; rows.len() * seq];
        for (b, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.is_empty() {
                return Err(Error::Shape(format!("row {b} has no tokens")));
            }
            ids[b * seq..b * seq + r.len()].copy_from_slice(r);
            mask[b * seq..b * seq + r.len()].fill(1);
        }
        Ok(TokenBatch {
            ids,
            mask: Mask {
                batch: rows.len(),
                seq,
                data: mask,
            },
        })
    }

    pub fn batch(&self) -> usize {
        self.mask.batch
    }

    pub fn seq(&self) -> usize {
        self.mask.seq
    }

    pub fn row(&self, b: usize) -> &[u32] {
        let s = self.seq();
        &self.ids[b * s..(b + 1) * s]
    }
}

/// `[batch, seq, dim]` contextual representations.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates<T> {
    pub batch: usize,
    pub seq: usize,
    pub dim: usize,
    pub data: Vec<T>,
}

impl<T> HiddenStates<T> {
    pub fn row(&self, b: usize) -> &[T] {
        let n = self.seq * self.dim;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn token(&self, b: usize, k: usize) -> &[T] {
        let start = (b * self.seq + k) * self.dim;
        &self.data[start..start + self.dim]
    }
}

/// `[batch, heads, seq, seq]` attention probabilities of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensor<T> {
    pub batch: usize,
    pub heads: usize,
    pub seq: usize,
    pub data: Vec<T>,
}

impl<T: Copy> AttentionTensor<T> {
    /// All heads of row `b`, `[heads, seq, seq]`.
    pub fn row(&self, b: usize) -> &[T] {
        let n = self.heads * self.seq * self.seq;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn get(&self, b: usize, h: usize, q: usize, k: usize) -> T {
        self.data[((b * self.heads + h) * self.seq + q) * self.seq + k]
    }
}
