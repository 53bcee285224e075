//! Encoder–decoder transformer over SID tokens.
//!
//! The encoder can be stopped after any layer, its states pruned, and then
//! resumed on the shorter sequence. Gradients are computed by hand; the
//! model is generic over `f32` and `f64`.

mod adam;
mod config;
mod net;
mod ops;
mod params;
mod train;

pub use adam::Adam;
pub use config::ModelConfig;
pub use params::{CheckpointMeta, Seq2Seq};
pub use train::PrunePlan;

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::pruner::{apply_strategy, StrategyKind};
use crate::sid::{SidIndex, SidSequence};
use crate::tensor::{AttentionTensor, HiddenStates, Mask, TokenBatch};
use crate::tokens::{sid_token, BOS};
use net::log_softmax;
use ops::LnCache;

/// One beam-search result.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedSid {
    pub sid: SidSequence,
    pub log_prob: f64,
}

fn rank_order(a: &(Vec<u32>, f64), b: &(Vec<u32>, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.0.cmp(&b.0))
}

impl<T: Scalar> Seq2Seq<T> {
    fn check_batch(&self, batch: &TokenBatch) -> Result<()> {
        if batch.ids.len() != batch.batch() * batch.seq() {
            return Err(Error::Shape("token buffer length".into()));
        }
        for b in 0..batch.batch() {
            if batch.mask.unmasked(b) == 0 {
                return Err(Error::Shape(format!("row {b} is fully masked")));
            }
        }
        Ok(())
    }

    /// Hidden states after encoder layer `stop_layer` (1-based), that
    /// layer's attention probabilities, and the batch itself.
    pub fn encode_until(
        &self,
        batch: &TokenBatch,
        stop_layer: usize,
    ) -> Result<(HiddenStates<T>, AttentionTensor<T>, TokenBatch)> {
        let n = self.config.n_enc_layers;
        if stop_layer == 0 || stop_layer > n {
            return Err(Error::InvalidArgument(format!(
                "stop_layer {stop_layer} outside 1..={n}"
            )));
        }
        self.check_batch(batch)?;
        let (b, s, d, heads) = (batch.batch(), batch.seq(), self.config.d_model, self.config.n_heads);
        let mut hidden = Vec::with_capacity(b * s * d);
        let mut attn = Vec::with_capacity(b * heads * s * s);
        for row in 0..b {
            let mask = batch.mask.row(row);
            let mut x = self.embed_enc(batch.row(row))?;
            for l in 0..stop_layer {
                let cache = self.enc_layer(l, &mut x, mask, None);
                if l + 1 == stop_layer {
                    attn.extend_from_slice(&cache.attn.probs);
                }
            }
            hidden.extend(x);
        }
        Ok((
            HiddenStates {
                batch: b,
                seq: s,
                dim: d,
                data: hidden,
            },
            AttentionTensor {
                batch: b,
                heads,
                seq: s,
                data: attn,
            },
            batch.clone(),
        ))
    }

    /// Run encoder layers `start_layer..=n_enc_layers` (1-based) on
    /// possibly pruned states. `start_layer = n_enc_layers + 1` is the identity.
    pub fn encode_resume(
        &self,
        hidden: &HiddenStates<T>,
        mask: &Mask,
        start_layer: usize,
    ) -> Result<HiddenStates<T>> {
        let n = self.config.n_enc_layers;
        if start_layer == 0 || start_layer > n + 1 {
            return Err(Error::InvalidArgument(format!(
                "start_layer {start_layer} outside 1..={}",
                n + 1
            )));
        }
        if hidden.dim != self.config.d_model
            || hidden.batch != mask.batch
            || hidden.seq != mask.seq
            || hidden.data.len() != hidden.batch * hidden.seq * hidden.dim
        {
            return Err(Error::Shape(format!(
                "hidden [{}, {}, {}] vs mask [{}, {}]",
                hidden.batch, hidden.seq, hidden.dim, mask.batch, mask.seq
            )));
        }
        let mut out = hidden.clone();
        let stride = hidden.seq * hidden.dim;
        for row in 0..hidden.batch {
            let m = mask.row(row);
            if m.iter().all(|&v| v == 0) {
                return Err(Error::Shape(format!("row {row} is fully masked")));
            }
            let x = &mut out.data[row * stride..(row + 1) * stride];
            for l in start_layer - 1..n {
                self.enc_layer(l, x, m, None);
            }
        }
        Ok(out)
    }

    /// Full encoder pass without pruning.
    pub fn encode(&self, batch: &TokenBatch) -> Result<HiddenStates<T>> {
        Ok(self.encode_until(batch, self.config.n_enc_layers)?.0)
    }

    /// Encoder pass with `plan` applied between its layers.
    pub fn encode_pruned(&self, batch: &TokenBatch, plan: &PrunePlan) -> Result<(HiddenStates<T>, Mask)> {
        plan.validate(self.config.n_enc_layers)?;
        if plan.strategy.kind == StrategyKind::None {
            return Ok((self.encode(batch)?, batch.mask.clone()));
        }
        let (h, a, _) = self.encode_until(batch, plan.layer)?;
        let (h, m) = apply_strategy(&plan.strategy, &h, Some(&a), &batch.mask)?;
        let h = self.encode_resume(&h, &m, plan.layer + 1)?;
        Ok((h, m))
    }

    fn check_targets(&self, targets: &[Vec<u32>], rows: usize) -> Result<()> {
        if targets.len() != rows {
            return Err(Error::Shape(format!(
                "{} targets for {rows} rows",
                targets.len()
            )));
        }
        for t in targets {
            if t.len() != self.config.target_len {
                return Err(Error::Shape(format!(
                    "target of length {}, expected {}",
                    t.len(),
                    self.config.target_len
                )));
            }
            for &tok in t {
                self.check_token(tok)?;
            }
        }
        Ok(())
    }

    /// Mean over rows of the summed next-token negative log-likelihood of
    /// `targets` (token ids) under teacher forcing.
    pub fn decode_loss(&self, enc_out: &HiddenStates<T>, enc_mask: &Mask, targets: &[Vec<u32>]) -> Result<T> {
        self.check_targets(targets, enc_out.batch)?;
        if enc_mask.batch != enc_out.batch || enc_mask.seq != enc_out.seq {
            return Err(Error::Shape("encoder mask does not match states".into()));
        }
        let v = self.config.vocab_size;
        let t = self.config.target_len;
        let mut total = T::zero();
        for (row, target) in targets.iter().enumerate() {
            let mut ln = LnCache::default();
            let mem = self.norm(&self.layout.mem_norm, enc_out.row(row), &mut ln);
            let kv = self.memory_kv(&mem);
            let mut x = self.embed_dec(&Self::shift_right(target), t)?;
            for (l, kv_l) in kv.iter().enumerate() {
                self.dec_layer(l, &mut x, 1, t, kv_l, enc_mask.row(row), None);
            }
            let (_, logits) = self.head(&x, &mut LnCache::default());
            let logp = log_softmax(&logits, v);
            for (i, &tok) in target.iter().enumerate() {
                total -= logp[i * v + tok as usize];
            }
        }
        Ok(total / T::cast(targets.len() as f64))
    }

    /// Trie-constrained beam search, one ranked list per row. Scores are
    /// full-vocabulary log-probabilities; ties rank by code order.
    pub fn generate(
        &self,
        enc_out: &HiddenStates<T>,
        enc_mask: &Mask,
        index: &SidIndex,
        beam: usize,
    ) -> Result<Vec<Vec<RankedSid>>> {
        if beam == 0 {
            return Err(Error::InvalidArgument("beam must be at least 1".into()));
        }
        if index.trie().is_empty() {
            return Err(Error::EmptyIndex);
        }
        let depth = index.depth();
        if depth != self.config.target_len {
            return Err(Error::InvalidArgument(format!(
                "index depth {depth} differs from model target_len {}",
                self.config.target_len
            )));
        }
        (0..enc_out.batch)
            .map(|row| self.generate_row(enc_out.row(row), enc_mask.row(row), index, beam))
            .collect()
    }

    fn generate_row(&self, hidden: &[T], mask: &[u8], index: &SidIndex, beam: usize) -> Result<Vec<RankedSid>> {
        let d = self.config.d_model;
        let v = self.config.vocab_size;
        let size = index.codebook_size();
        let mem = self.norm(&self.layout.mem_norm, hidden, &mut LnCache::default());
        let kv = self.memory_kv(&mem);

        let mut beams: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
        for step in 0..index.depth() {
            let t = step + 1;
            let expand: Vec<(usize, Vec<u32>)> = beams
                .iter()
                .enumerate()
                .map(|(i, (prefix, _))| (i, index.trie().children(prefix)))
                .filter(|(_, c)| !c.is_empty())
                .collect();
            if expand.is_empty() {
                break;
            }
            let mut tokens = Vec::with_capacity(expand.len() * t);
            for (i, _) in &expand {
                tokens.push(BOS);
                tokens.extend(
                    beams[*i]
                        .0
                        .iter()
                        .enumerate()
                        .map(|(lvl, &c)| sid_token(lvl, c, size)),
                );
            }
            let groups = expand.len();
            let mut x = self.embed_dec(&tokens, t)?;
            for (l, kv_l) in kv.iter().enumerate() {
                self.dec_layer(l, &mut x, groups, t, kv_l, mask, None);
            }
            let mut last = Vec::with_capacity(groups * d);
            for g in 0..groups {
                last.extend_from_slice(&x[((g + 1) * t - 1) * d..(g + 1) * t * d]);
            }
            let (_, logits) = self.head(&last, &mut LnCache::default());
            let logp = log_softmax(&logits, v);

            let mut cands = Vec::new();
            for (g, (i, children)) in expand.iter().enumerate() {
                let (prefix, score) = &beams[*i];
                for &c in children {
                    let tok = sid_token(step, c, size) as usize;
                    let mut codes = prefix.clone();
                    codes.push(c);
                    cands.push((codes, score + logp[g * v + tok].as_f64()));
                }
            }
            cands.sort_by(rank_order);
            cands.truncate(beam);
            beams = cands;
        }
        Ok(beams
            .into_iter()
            .map(|(codes, log_prob)| RankedSid {
                sid: SidSequence(codes),
                log_prob,
            })
            .collect())
    }
}
