//! Semantic-ID tokenization: residual k-means codebooks that turn a dense
//! item embedding into an ordered tuple of discrete codes.

mod index;
mod io;
pub(crate) mod kmeans;

pub use index::{SidIndex, SidTrie};
pub use io::{
    read_embeddings, read_embeddings_binary, read_embeddings_text, write_embeddings_binary,
    write_embeddings_text,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense feature vector for one item.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemEmbedding {
    pub item_id: String,
    pub vector: Vec<f32>,
}

impl ItemEmbedding {
    pub fn new(item_id: impl Into<String>, vector: Vec<f32>) -> Self {
        ItemEmbedding {
            item_id: item_id.into(),
            vector,
        }
    }
}

/// One code per quantization level, each in `[0, W)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SidSequence(pub Vec<u32>);

impl SidSequence {
    pub fn codes(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `L` codebooks of `W` centroids each, stored level-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SidCodebooks {
    pub(crate) levels: usize,
    pub(crate) size: usize,
    pub(crate) dim: usize,
    pub(crate) seed: u64,
    pub(crate) fingerprint: u64,
    pub(crate) centroids: Vec<f32>,
}

impl SidCodebooks {
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// FNV-1a hash over the training corpus (ids and vector bits).
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Centroid `code` of `level`.
    pub fn centroid(&self, level: usize, code: usize) -> &[f32] {
        let start = (level * self.size + code) * self.dim;
        &self.centroids[start..start + self.dim]
    }

    /// All `W` centroids of one level, row-major.
    pub fn level(&self, level: usize) -> &[f32] {
        let stride = self.size * self.dim;
        &self.centroids[level * stride..(level + 1) * stride]
    }

    /// Build codebooks from raw parts, validating shape and finiteness.
    pub fn from_parts(
        levels: usize,
        size: usize,
        dim: usize,
        seed: u64,
        fingerprint: u64,
        centroids: Vec<f32>,
    ) -> Result<Self> {
        if levels == 0 || size == 0 || dim == 0 {
            return Err(Error::InvalidArgument(
                "codebooks need at least one level, centroid and dimension".into(),
            ));
        }
        if centroids.len() != levels * size * dim {
            return Err(Error::DimensionMismatch {
                expected: levels * size * dim,
                got: centroids.len(),
            });
        }
        if centroids.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("non-finite centroid".into()));
        }
        Ok(SidCodebooks {
            levels,
            size,
            dim,
            seed,
            fingerprint,
            centroids,
        })
    }

    /// Quantize one embedding level by level; each code is the nearest
    /// centroid to what remains after subtracting the earlier levels.
    pub fn encode(&self, embedding: &ItemEmbedding) -> Result<SidSequence> {
        self.encode_with_residual(&embedding.vector)
            .map(|(seq, _)| seq)
    }

    /// Like [`encode`](Self::encode), also returning the squared residual
    /// norm after each level.
    pub fn encode_with_residual(&self, vector: &[f32]) -> Result<(SidSequence, Vec<f64>)> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        let mut residual = vector.to_vec();
        let mut codes = Vec::with_capacity(self.levels);
        let mut norms = Vec::with_capacity(self.levels);
        for level in 0..self.levels {
            let (code, _) = kmeans::nearest(&residual, self.level(level), self.dim);
            for (r, &c) in residual.iter_mut().zip(self.centroid(level, code)) {
                *r -= c;
            }
            codes.push(code as u32);
            norms.push(residual.iter().map(|&x| f64::from(x) * f64::from(x)).sum());
        }
        Ok((SidSequence(codes), norms))
    }
}

pub fn encode_item(codebooks: &SidCodebooks, embedding: &ItemEmbedding) -> Result<SidSequence> {
    codebooks.encode(embedding)
}

pub(crate) fn validate_corpus(embeddings: &[ItemEmbedding]) -> Result<usize> {
    let Some(first) = embeddings.first() else {
        return Ok(0);
    };
    let dim = first.vector.len();
    for e in embeddings {
        if e.vector.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: e.vector.len(),
            });
        }
        if e.vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteEmbedding {
                item_id: e.item_id.clone(),
            });
        }
    }
    Ok(dim)
}

pub(crate) fn corpus_fingerprint(embeddings: &[ItemEmbedding]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
    };
    for e in embeddings {
        eat(e.item_id.as_bytes());
        eat(&[0xff]);
        for x in &e.vector {
            eat(&x.to_le_bytes());
        }
    }
    h
}

/// Fit `levels` residual k-means codebooks of `size` centroids each.
///
/// Level `ℓ` clusters the residuals left after subtracting each item's
/// assigned centroids from levels `< ℓ`. Output is a pure function of the
/// inputs and `seed`.
pub fn fit_codebooks(
    embeddings: &[ItemEmbedding],
    levels: usize,
    size: usize,
    iters: usize,
    seed: u64,
) -> Result<SidCodebooks> {
    if levels == 0 {
        return Err(Error::InvalidArgument("levels must be at least 1".into()));
    }
    if iters == 0 {
        return Err(Error::InvalidArgument("iters must be at least 1".into()));
    }
    if size == 0 || embeddings.len() < size {
        return Err(Error::InsufficientCorpus {
            items: embeddings.len(),
            codebook_size: size,
        });
    }
    let dim = validate_corpus(embeddings)?;
    if dim == 0 {
        return Err(Error::InvalidArgument("embeddings have zero dimension".into()));
    }

    let n = embeddings.len();
    let mut residuals: Vec<f32> = embeddings
        .iter()
        .flat_map(|e| e.vector.iter().copied())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Vec::with_capacity(levels * size * dim);

    for _ in 0..levels {
        let level = kmeans::fit(&residuals, n, dim, size, iters, &mut rng);
        for r in residuals.chunks_exact_mut(dim) {
            let (code, _) = kmeans::nearest(r, &level, dim);
            for (x, &c) in r.iter_mut().zip(&level[code * dim..(code + 1) * dim]) {
                *x -= c;
            }
        }
        centroids.extend_from_slice(&level);
    }

    SidCodebooks::from_parts(
        levels,
        size,
        dim,
        seed,
        corpus_fingerprint(embeddings),
        centroids,
    )
}
