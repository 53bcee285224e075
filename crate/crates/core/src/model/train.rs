//! Per-row forward/backward with pruning spliced between encoder layers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{log_softmax, maybe_mask, Dropout, EncCache};
use super::ops::{scale_in_place, LnCache};
use super::params::Seq2Seq;
use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::pruner::{apply_row, apply_row_bwd, plan_row, PruneStrategy, StrategyKind};
use crate::tensor::TokenBatch;

/// Which strategy to apply, after which encoder layer (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrunePlan {
    pub strategy: PruneStrategy,
    pub layer: usize,
}

impl PrunePlan {
    pub fn none() -> Self {
        PrunePlan {
            strategy: PruneStrategy::none(),
            layer: 1,
        }
    }

    pub fn new(strategy: PruneStrategy, layer: usize) -> Self {
        PrunePlan { strategy, layer }
    }

    pub fn validate(&self, n_enc_layers: usize) -> Result<()> {
        self.strategy.validate()?;
        if self.layer == 0 || self.layer > n_enc_layers {
            return Err(Error::InvalidArgument(format!(
                "prune layer {} outside 1..={n_enc_layers}",
                self.layer
            )));
        }
        Ok(())
    }

    fn active(&self) -> bool {
        self.strategy.kind != StrategyKind::None
    }
}

fn row_seed(seed: u64, row: usize) -> u64 {
    // splitmix64 finalizer over (seed, row)
    let mut z = seed ^ (row as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl<T: Scalar> Seq2Seq<T> {
    /// Mean loss over the batch and its gradient with respect to every
    /// parameter. Dropout runs only when `dropout_seed` is given.
    pub fn loss_and_grad(
        &self,
        batch: &TokenBatch,
        targets: &[Vec<u32>],
        plan: &PrunePlan,
        dropout_seed: Option<u64>,
    ) -> Result<(T, Vec<T>)> {
        plan.validate(self.config.n_enc_layers)?;
        self.check_targets(targets, batch.batch())?;
        let mut grad = vec![T::zero(); self.w.len()];
        let scale = T::one() / T::cast(batch.batch() as f64);
        let mut total = T::zero();
        for (row, target) in targets.iter().enumerate() {
            if batch.mask.unmasked(row) == 0 {
                return Err(Error::Shape(format!("row {row} is fully masked")));
            }
            let loss = match dropout_seed.filter(|_| self.config.dropout > 0.0) {
                Some(seed) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(row_seed(seed, row));
                    let mut drop = Dropout {
                        p: self.config.dropout,
                        rng: &mut rng,
                    };
                    self.row_step(batch.row(row), batch.mask.row(row), target, plan, row, Some(&mut drop), scale, &mut grad)?
                }
                None => self.row_step(batch.row(row), batch.mask.row(row), target, plan, row, None, scale, &mut grad)?,
            };
            total += loss;
        }
        Ok((total * scale, grad))
    }

    #[allow(clippy::too_many_arguments)]
    fn row_step(
        &self,
        ids: &[u32],
        mask: &[u8],
        target: &[u32],
        plan: &PrunePlan,
        row: usize,
        mut drop: Option<&mut Dropout<'_>>,
        scale: T,
        grad: &mut [T],
    ) -> Result<T> {
        let c = &self.config;
        let d = c.d_model;
        let v = c.vocab_size;
        let t = c.target_len;

        // encoder
        let mut x = self.embed_enc(ids)?;
        let drop_emb = maybe_mask(&mut drop, x.len());
        scale_in_place(&mut x, drop_emb.as_ref());
        let mut cur_mask = mask.to_vec();
        let mut caches: Vec<EncCache<T>> = Vec::with_capacity(c.n_enc_layers);
        let mut pruned = None;
        for l in 0..=c.n_enc_layers {
            if l == plan.layer && plan.active() {
                let probs = &caches[l - 1].attn.probs;
                let seq = cur_mask.len();
                if let Some(op) = plan_row(&plan.strategy, &x, d, probs, c.n_heads, &cur_mask, row)? {
                    let applied = apply_row(&op, &x, d, &cur_mask);
                    x.clone_from(&applied.hidden);
                    cur_mask.clone_from(&applied.mask);
                    pruned = Some((op, applied, seq));
                }
            }
            if l < c.n_enc_layers {
                caches.push(self.enc_layer(l, &mut x, &cur_mask, drop.as_deref_mut()));
            }
        }

        // decoder
        let mut mem_ln = LnCache::default();
        let mem = self.norm(&self.layout.mem_norm, &x, &mut mem_ln);
        let mem_kv = self.memory_kv(&mem);
        let dec_in = Self::shift_right(target);
        let mut y = self.embed_dec(&dec_in, t)?;
        let drop_dec = maybe_mask(&mut drop, y.len());
        scale_in_place(&mut y, drop_dec.as_ref());
        let mut dec_caches = Vec::with_capacity(c.n_dec_layers);
        for (l, kv) in mem_kv.iter().enumerate() {
            dec_caches.push(self.dec_layer(l, &mut y, 1, t, kv, &cur_mask, drop.as_deref_mut()));
        }
        let mut out_ln = LnCache::default();
        let (yo, logits) = self.head(&y, &mut out_ln);
        let logp = log_softmax(&logits, v);

        let mut loss = T::zero();
        let mut dlogits = vec![T::zero(); logits.len()];
        for (i, &tok) in target.iter().enumerate() {
            loss -= logp[i * v + tok as usize];
            for j in 0..v {
                dlogits[i * v + j] = logp[i * v + j].exp() * scale;
            }
            dlogits[i * v + tok as usize] -= scale;
        }
        if !loss.is_finite() {
            return Ok(loss);
        }

        // backward
        let mut dy = vec![T::zero(); y.len()];
        self.head_bwd(&yo, &out_ln, &dlogits, grad, &mut dy);
        let mut dmem = vec![T::zero(); mem.len()];
        for l in (0..c.n_dec_layers).rev() {
            let mut dkv = vec![T::zero(); mem_kv[l].len()];
            self.dec_layer_bwd(l, &dec_caches[l], &mem_kv[l], &mut dy, &mut dkv, grad);
            self.mem_kv_bwd(l, &mem, &dkv, grad, &mut dmem);
        }
        scale_in_place(&mut dy, drop_dec.as_ref());
        self.embed_dec_bwd(&dec_in, t, &dy, grad);

        let mut dx = vec![T::zero(); x.len()];
        self.norm_bwd(&self.layout.mem_norm, &dmem, &mem_ln, grad, &mut dx);
        for l in (0..c.n_enc_layers).rev() {
            if l + 1 == plan.layer {
                if let Some((op, applied, seq)) = &pruned {
                    dx = apply_row_bwd(op, applied, &dx, d, *seq);
                }
            }
            self.enc_layer_bwd(l, &caches[l], &mut dx, grad);
        }
        scale_in_place(&mut dx, drop_emb.as_ref());
        self.embed_enc_bwd(ids, &dx, grad);
        Ok(loss)
    }
}
