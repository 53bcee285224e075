//! Representation-aware token pruning.
//!
//! A token's importance is the attention mass it receives (summed over heads
//! and unmasked queries) times the ℓ1 norm of its hidden state. The top
//! `⌊ρ·S⌋` tokens of each row are kept in their original order. Pooling and
//! ℓ2-norm selection are provided as baselines.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::tensor::{AttentionTensor, HiddenStates, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Rastp,
    L2norm,
    Maxpool,
    Avgpool,
    None,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Rastp,
        StrategyKind::L2norm,
        StrategyKind::Maxpool,
        StrategyKind::Avgpool,
        StrategyKind::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Rastp => "rastp",
            StrategyKind::L2norm => "l2norm",
            StrategyKind::Maxpool => "maxpool",
            StrategyKind::Avgpool => "avgpool",
            StrategyKind::None => "none",
        }
    }

    pub fn is_pool(self) -> bool {
        matches!(self, StrategyKind::Maxpool | StrategyKind::Avgpool)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown strategy `{s}` (expected rastp | l2norm | maxpool | avgpool | none)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneStrategy {
    pub kind: StrategyKind,
    /// Fraction of positions kept by the selection strategies.
    pub rho: f64,
    /// Window for the pooling strategies.
    pub pool_window: usize,
}

impl Default for PruneStrategy {
    fn default() -> Self {
        PruneStrategy {
            kind: StrategyKind::None,
            rho: 0.7,
            pool_window: 2,
        }
    }
}

impl PruneStrategy {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn rastp(rho: f64) -> Self {
        PruneStrategy {
            kind: StrategyKind::Rastp,
            rho,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rho {} outside (0, 1]",
                self.rho
            )));
        }
        if self.kind.is_pool() && self.pool_window < 2 {
            return Err(Error::InvalidArgument(format!(
                "pool_window {} must be at least 2",
                self.pool_window
            )));
        }
        Ok(())
    }
}

/// `⌊ρ·S⌋`, at least 1. A tiny slack absorbs products such as `0.7 · 120`
/// landing a hair under an integer.
pub fn keep_count(seq: usize, rho: f64) -> Result<usize> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidArgument(format!("rho {rho} outside (0, 1]")));
    }
    Ok(((rho * seq as f64 + 1e-9).floor() as usize).clamp(1, seq.max(1)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceScores<T> {
    pub batch: usize,
    pub seq: usize,
    /// `centrality · saliency`; `-∞` at masked positions.
    pub scores: Vec<T>,
    pub saliency: Vec<T>,
    pub centrality: Vec<T>,
}

impl<T> ImportanceScores<T> {
    pub fn row(&self, b: usize) -> &[T] {
        &self.scores[b * self.seq..(b + 1) * self.seq]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneResult<T> {
    /// Ascending source positions per row. For pooling, the first member of
    /// each window.
    pub kept_indices: Vec<Vec<usize>>,
    pub hidden: HiddenStates<T>,
    pub mask: Mask,
    pub keep_count: usize,
}

// ---- row kernels -----------------------------------------------------------

/// ℓ1 norm of every `d`-wide row of `h`.
pub(crate) fn row_saliency<T: Scalar>(h: &[T], d: usize) -> Vec<T> {
    h.chunks_exact(d)
        .map(|t| t.iter().map(|x| x.abs()).sum())
        .collect()
}

/// Attention received per key, summed over heads and unmasked queries.
pub(crate) fn row_centrality<T: Scalar>(probs: &[T], heads: usize, seq: usize, mask: &[u8]) -> Vec<T> {
    let mut c = vec![T::zero(); seq];
    for h in 0..heads {
        for q in 0..seq {
            if mask[q] == 0 {
                continue;
            }
            let row = &probs[(h * seq + q) * seq..(h * seq + q + 1) * seq];
            for (acc, &a) in c.iter_mut().zip(row) {
                *acc += a;
            }
        }
    }
    c
}

fn masked_scores<T: Scalar>(raw: impl Iterator<Item = T>, mask: &[u8]) -> Vec<T> {
    raw.zip(mask)
        .map(|(s, &m)| if m != 0 { s } else { T::neg_infinity() })
        .collect()
}

/// Positions of the `k` largest scores (ties to the lower index), ascending.
pub(crate) fn top_k_ascending<T: Scalar>(scores: &[T], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order.sort_unstable();
    order
}

fn check_finite<T: Scalar>(h: &[T], d: usize, row: usize) -> Result<()> {
    if let Some(i) = h.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFiniteHidden {
            row,
            position: i / d,
        });
    }
    Ok(())
}

/// A per-row pruning decision, replayable in the backward pass.
#[derive(Debug, Clone)]
pub(crate) enum RowPrune {
    Gather(Vec<usize>),
    Pool { kind: PoolKind, groups: Vec<Vec<usize>> },
}

pub(crate) fn pool_groups(mask: &[u8], window: usize) -> Vec<Vec<usize>> {
    let live: Vec<usize> = (0..mask.len()).filter(|&i| mask[i] != 0).collect();
    live.chunks(window.max(1)).map(<[usize]>::to_vec).collect()
}

/// Decide what to keep in one `seq × d` row. `probs` (`[heads, seq, seq]`)
/// is only read by the attention-aware strategy.
pub(crate) fn plan_row<T: Scalar>(
    strategy: &PruneStrategy,
    h: &[T],
    d: usize,
    probs: &[T],
    heads: usize,
    mask: &[u8],
    row: usize,
) -> Result<Option<RowPrune>> {
    let seq = mask.len();
    match strategy.kind {
        StrategyKind::None => Ok(None),
        StrategyKind::Rastp => {
            check_finite(h, d, row)?;
            let sal = row_saliency(h, d);
            let cen = row_centrality(probs, heads, seq, mask);
            let scores = masked_scores(cen.iter().zip(&sal).map(|(&c, &s)| c * s), mask);
            let k = keep_count(seq, strategy.rho)?;
            Ok(Some(RowPrune::Gather(top_k_ascending(&scores, k))))
        }
        StrategyKind::L2norm => {
            check_finite(h, d, row)?;
            let scores = masked_scores(l2_norms(h, d).into_iter(), mask);
            let k = keep_count(seq, strategy.rho)?;
            Ok(Some(RowPrune::Gather(top_k_ascending(&scores, k))))
        }
        StrategyKind::Maxpool | StrategyKind::Avgpool => {
            let kind = if strategy.kind == StrategyKind::Maxpool {
                PoolKind::Max
            } else {
                PoolKind::Avg
            };
            Ok(Some(RowPrune::Pool {
                kind,
                groups: pool_groups(mask, strategy.pool_window),
            }))
        }
    }
}

fn l2_norms<T: Scalar>(h: &[T], d: usize) -> Vec<T> {
    h.chunks_exact(d)
        .map(|t| t.iter().map(|&x| x * x).sum::<T>().sqrt())
        .collect()
}

/// Output of [`apply_row`]; `argmax` routes max-pool gradients.
pub(crate) struct Applied<T> {
    pub hidden: Vec<T>,
    pub mask: Vec<u8>,
    argmax: Vec<usize>,
}

pub(crate) fn apply_row<T: Scalar>(op: &RowPrune, h: &[T], d: usize, mask: &[u8]) -> Applied<T> {
    match op {
        RowPrune::Gather(idx) => {
            let mut hidden = Vec::with_capacity(idx.len() * d);
            for &k in idx {
                hidden.extend_from_slice(&h[k * d..(k + 1) * d]);
            }
            Applied {
                hidden,
                mask: idx.iter().map(|&k| mask[k]).collect(),
                argmax: Vec::new(),
            }
        }
        RowPrune::Pool { kind, groups } => {
            let mut hidden = vec![T::zero(); groups.len() * d];
            let mut argmax = Vec::new();
            for (g, members) in groups.iter().enumerate() {
                let out = &mut hidden[g * d..(g + 1) * d];
                match kind {
                    PoolKind::Avg => {
                        let inv = T::one() / T::cast(members.len() as f64);
                        for &k in members {
                            for (o, &v) in out.iter_mut().zip(&h[k * d..(k + 1) * d]) {
                                *o += v;
                            }
                        }
                        for o in out.iter_mut() {
                            *o *= inv;
                        }
                    }
                    PoolKind::Max => {
                        for i in 0..d {
                            let mut best = members[0];
                            for &k in &members[1..] {
                                if h[k * d + i] > h[best * d + i] {
                                    best = k;
                                }
                            }
                            out[i] = h[best * d + i];
                            argmax.push(best);
                        }
                    }
                }
            }
            Applied {
                hidden,
                mask: vec![1; groups.len()],
                argmax,
            }
        }
    }
}

/// Scatter the gradient of a pruned row back onto the `seq × d` input row.
pub(crate) fn apply_row_bwd<T: Scalar>(
    op: &RowPrune,
    applied: &Applied<T>,
    dout: &[T],
    d: usize,
    seq: usize,
) -> Vec<T> {
    let mut dh = vec![T::zero(); seq * d];
    match op {
        RowPrune::Gather(idx) => {
            for (j, &k) in idx.iter().enumerate() {
                for (g, &v) in dh[k * d..(k + 1) * d].iter_mut().zip(&dout[j * d..(j + 1) * d]) {
                    *g += v;
                }
            }
        }
        RowPrune::Pool { kind, groups } => {
            for (g, members) in groups.iter().enumerate() {
                let src = &dout[g * d..(g + 1) * d];
                match kind {
                    PoolKind::Avg => {
                        let inv = T::one() / T::cast(members.len() as f64);
                        for &k in members {
                            for (dst, &v) in dh[k * d..(k + 1) * d].iter_mut().zip(src) {
                                *dst += v * inv;
                            }
                        }
                    }
                    PoolKind::Max => {
                        for i in 0..d {
                            dh[applied.argmax[g * d + i] * d + i] += src[i];
                        }
                    }
                }
            }
        }
    }
    dh
}

// ---- batch API ---------------------------------------------------------------

fn check_shapes<T>(hidden: &HiddenStates<T>, mask: &Mask) -> Result<()> {
    if hidden.batch != mask.batch || hidden.seq != mask.seq {
        return Err(Error::Shape(format!(
            "hidden [{}, {}] vs mask [{}, {}]",
            hidden.batch, hidden.seq, mask.batch, mask.seq
        )));
    }
    if hidden.data.len() != hidden.batch * hidden.seq * hidden.dim {
        return Err(Error::Shape("hidden buffer length".into()));
    }
    Ok(())
}

/// Saliency (ℓ1 norm), centrality (received attention) and their product.
pub fn score_tokens<T: Scalar>(
    hidden: &HiddenStates<T>,
    attn: &AttentionTensor<T>,
    mask: &Mask,
) -> Result<ImportanceScores<T>> {
    check_shapes(hidden, mask)?;
    if attn.batch != hidden.batch || attn.seq != hidden.seq {
        return Err(Error::Shape(format!(
            "attention [{}, _, {}] vs hidden [{}, {}]",
            attn.batch, attn.seq, hidden.batch, hidden.seq
        )));
    }
    let (b, s, d) = (hidden.batch, hidden.seq, hidden.dim);
    let mut scores = Vec::with_capacity(b * s);
    let mut saliency = Vec::with_capacity(b * s);
    let mut centrality = Vec::with_capacity(b * s);
    for row in 0..b {
        let h = hidden.row(row);
        check_finite(h, d, row)?;
        let m = mask.row(row);
        let sal = row_saliency(h, d);
        let cen = row_centrality(attn.row(row), attn.heads, s, m);
        scores.extend(masked_scores(cen.iter().zip(&sal).map(|(&c, &x)| c * x), m));
        saliency.extend(sal);
        centrality.extend(cen);
    }
    Ok(ImportanceScores {
        batch: b,
        seq: s,
        scores,
        saliency,
        centrality,
    })
}

fn gather_batch<T: Scalar>(
    hidden: &HiddenStates<T>,
    mask: &Mask,
    k: usize,
    row_scores: impl Fn(usize) -> Vec<T>,
) -> PruneResult<T> {
    let d = hidden.dim;
    let mut kept_indices = Vec::with_capacity(hidden.batch);
    let mut data = Vec::with_capacity(hidden.batch * k * d);
    let mut bits = Vec::with_capacity(hidden.batch * k);
    for row in 0..hidden.batch {
        let idx = top_k_ascending(&row_scores(row), k);
        let out = apply_row(&RowPrune::Gather(idx.clone()), hidden.row(row), d, mask.row(row));
        data.extend(out.hidden);
        bits.extend(out.mask);
        kept_indices.push(idx);
    }
    PruneResult {
        kept_indices,
        hidden: HiddenStates {
            batch: hidden.batch,
            seq: k,
            dim: d,
            data,
        },
        mask: Mask {
            batch: hidden.batch,
            seq: k,
            data: bits,
        },
        keep_count: k,
    }
}

/// Keep the `⌊ρ·S⌋` highest-scoring positions of every row, in original order.
pub fn select_and_gather<T: Scalar>(
    hidden: &HiddenStates<T>,
    mask: &Mask,
    scores: &ImportanceScores<T>,
    rho: f64,
) -> Result<PruneResult<T>> {
    check_shapes(hidden, mask)?;
    if scores.batch != hidden.batch || scores.seq != hidden.seq {
        return Err(Error::Shape("scores do not match hidden states".into()));
    }
    let k = keep_count(hidden.seq, rho)?;
    Ok(gather_batch(hidden, mask, k, |row| scores.row(row).to_vec()))
}

/// Selection by ℓ2 norm of the hidden state alone.
pub fn baseline_l2_select<T: Scalar>(
    hidden: &HiddenStates<T>,
    mask: &Mask,
    rho: f64,
) -> Result<PruneResult<T>> {
    check_shapes(hidden, mask)?;
    let k = keep_count(hidden.seq, rho)?;
    for row in 0..hidden.batch {
        check_finite(hidden.row(row), hidden.dim, row)?;
    }
    Ok(gather_batch(hidden, mask, k, |row| {
        masked_scores(l2_norms(hidden.row(row), hidden.dim).into_iter(), mask.row(row))
    }))
}

/// Collapse non-overlapping windows of unmasked positions by max or mean.
/// Rows are right-padded to the longest pooled row.
pub fn baseline_pool<T: Scalar>(
    hidden: &HiddenStates<T>,
    mask: &Mask,
    kind: PoolKind,
    window: usize,
) -> Result<PruneResult<T>> {
    check_shapes(hidden, mask)?;
    let d = hidden.dim;
    let rows: Vec<_> = (0..hidden.batch)
        .map(|row| {
            let groups = pool_groups(mask.row(row), window);
            let firsts: Vec<usize> = groups.iter().map(|g| g[0]).collect();
            let op = RowPrune::Pool { kind, groups };
            (firsts, apply_row(&op, hidden.row(row), d, mask.row(row)))
        })
        .collect();
    let len = rows.iter().map(|(f, _)| f.len()).max().unwrap_or(0).max(1);
    let mut data = vec![T::zero(); hidden.batch * len * d];
    let mut bits = vec![0u8; hidden.batch * len];
    let mut kept_indices = Vec::with_capacity(hidden.batch);
    for (row, (firsts, out)) in rows.into_iter().enumerate() {
        data[row * len * d..row * len * d + out.hidden.len()].copy_from_slice(&out.hidden);
        bits[row * len..row * len + out.mask.len()].copy_from_slice(&out.mask);
        kept_indices.push(firsts);
    }
    Ok(PruneResult {
        kept_indices,
        hidden: HiddenStates {
            batch: hidden.batch,
            seq: len,
            dim: d,
            data,
        },
        mask: Mask {
            batch: hidden.batch,
            seq: len,
            data: bits,
        },
        keep_count: len,
    })
}

/// Apply any strategy to a batch. `attn` is required only for `rastp`.
pub fn apply_strategy<T: Scalar>(
    strategy: &PruneStrategy,
    hidden: &HiddenStates<T>,
    attn: Option<&AttentionTensor<T>>,
    mask: &Mask,
) -> Result<(HiddenStates<T>, Mask)> {
    strategy.validate()?;
    let out = match strategy.kind {
        StrategyKind::None => return Ok((hidden.clone(), mask.clone())),
        StrategyKind::Rastp => {
            let attn = attn.ok_or_else(|| {
                Error::InvalidArgument("rastp needs attention weights".into())
            })?;
            let scores = score_tokens(hidden, attn, mask)?;
            select_and_gather(hidden, mask, &scores, strategy.rho)?
        }
        StrategyKind::L2norm => baseline_l2_select(hidden, mask, strategy.rho)?,
        StrategyKind::Maxpool => baseline_pool(hidden, mask, PoolKind::Max, strategy.pool_window)?,
        StrategyKind::Avgpool => baseline_pool(hidden, mask, PoolKind::Avg, strategy.pool_window)?,
    };
    Ok((out.hidden, out.mask))
}
