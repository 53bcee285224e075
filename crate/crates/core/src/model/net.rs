//! Encoder and decoder layers with the caches their backward passes need.

use rand_chacha::ChaCha8Rng;

use super::ops::{
    attention, attention_bwd, dropout_mask, gelu, gelu_bwd, layer_norm, layer_norm_bwd, linear,
    linear_bwd, scale_in_place, AttnShape, LnCache,
};
use super::params::{Attn, Linear, Mlp, Norm, Seq2Seq, Slot};
use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::tokens::BOS;

pub(crate) struct Dropout<'a> {
    pub p: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn mask<T: Scalar>(&mut self, len: usize) -> Option<Vec<T>> {
        (self.p > 0.0).then(|| dropout_mask(len, self.p, self.rng))
    }
}

pub(crate) fn maybe_mask<T: Scalar>(drop: &mut Option<&mut Dropout<'_>>, len: usize) -> Option<Vec<T>> {
    drop.as_mut().and_then(|d| d.mask(len))
}

/// Mutable views of a weight slot and the bias slot allocated right after it.
fn pair_mut<T>(grad: &mut [T], first: Slot, second: Slot) -> (&mut [T], &mut [T]) {
    debug_assert_eq!(first.off + first.len, second.off);
    let (a, b) = grad.split_at_mut(second.off);
    (&mut a[first.range()], &mut b[..second.len])
}

pub(crate) struct AttnCache<T> {
    pub shape: AttnShape,
    pub q: Vec<T>,
    pub probs: Vec<T>,
    pub ctx: Vec<T>,
}

pub(crate) struct MlpCache<T> {
    u: Vec<T>,
    g: Vec<T>,
}

pub(crate) struct EncCache<T> {
    ln1: LnCache<T>,
    y1: Vec<T>,
    kv: Vec<T>,
    pub attn: AttnCache<T>,
    drop1: Option<Vec<T>>,
    ln2: LnCache<T>,
    y2: Vec<T>,
    mlp: MlpCache<T>,
    drop2: Option<Vec<T>>,
}

pub(crate) struct DecCache<T> {
    ln1: LnCache<T>,
    y1: Vec<T>,
    self_kv: Vec<T>,
    self_attn: AttnCache<T>,
    drop1: Option<Vec<T>>,
    ln2: LnCache<T>,
    y2: Vec<T>,
    cross: AttnCache<T>,
    drop2: Option<Vec<T>>,
    ln3: LnCache<T>,
    y3: Vec<T>,
    mlp: MlpCache<T>,
    drop3: Option<Vec<T>>,
}

impl<T: Scalar> Seq2Seq<T> {
    fn lin(&self, l: &Linear, x: &[T]) -> Vec<T> {
        linear(x, l.din, self.p(l.w), self.p(l.b), l.dout)
    }

    fn lin_bwd(&self, l: &Linear, x: &[T], dy: &[T], grad: &mut [T], dx: Option<&mut [T]>) {
        let (dw, db) = pair_mut(grad, l.w, l.b);
        linear_bwd(x, dy, l.din, l.dout, self.p(l.w), dw, db, dx);
    }

    pub(crate) fn norm(&self, n: &Norm, x: &[T], cache: &mut LnCache<T>) -> Vec<T> {
        layer_norm(x, self.config.d_model, self.p(n.gain), self.p(n.bias), cache)
    }

    pub(crate) fn norm_bwd(&self, n: &Norm, dy: &[T], cache: &LnCache<T>, grad: &mut [T], dx: &mut [T]) {
        let (dg, db) = pair_mut(grad, n.gain, n.bias);
        layer_norm_bwd(dy, self.config.d_model, self.p(n.gain), cache, dg, db, dx);
    }

    pub(crate) fn kv_proj(&self, a: &Attn, src: &[T]) -> Vec<T> {
        self.lin(&a.kv, src)
    }

    fn attn_fwd(&self, a: &Attn, y: &[T], kv: &[T], shape: AttnShape, key_mask: &[u8]) -> (AttnCache<T>, Vec<T>) {
        let q = self.lin(&a.q, y);
        let mut probs = vec![T::zero(); shape.probs_len()];
        let mut ctx = vec![T::zero(); q.len()];
        attention(shape, &q, kv, key_mask, &mut probs, &mut ctx);
        let out = self.lin(&a.o, &ctx);
        (AttnCache { shape, q, probs, ctx }, out)
    }

    #[allow(clippy::too_many_arguments)]
    fn attn_bwd(
        &self,
        a: &Attn,
        y: &[T],
        kv: &[T],
        cache: &AttnCache<T>,
        dout: &[T],
        grad: &mut [T],
        dy: &mut [T],
        dkv: &mut [T],
    ) {
        let mut dctx = vec![T::zero(); cache.ctx.len()];
        self.lin_bwd(&a.o, &cache.ctx, dout, grad, Some(&mut dctx));
        let mut dq = vec![T::zero(); cache.q.len()];
        attention_bwd(cache.shape, &cache.q, kv, &cache.probs, &dctx, &mut dq, dkv);
        self.lin_bwd(&a.q, y, &dq, grad, Some(dy));
    }

    fn mlp_fwd(&self, m: &Mlp, y: &[T]) -> (MlpCache<T>, Vec<T>) {
        let u = self.lin(&m.up, y);
        let g = gelu(&u);
        let z = self.lin(&m.down, &g);
        (MlpCache { u, g }, z)
    }

    fn mlp_bwd(&self, m: &Mlp, y: &[T], cache: &MlpCache<T>, dz: &[T], grad: &mut [T], dy: &mut [T]) {
        let mut dg = vec![T::zero(); cache.g.len()];
        self.lin_bwd(&m.down, &cache.g, dz, grad, Some(&mut dg));
        let du = gelu_bwd(&cache.u, &dg);
        self.lin_bwd(&m.up, y, &du, grad, Some(dy));
    }

    /// Token plus learned absolute position embeddings.
    pub(crate) fn embed_enc(&self, ids: &[u32]) -> Result<Vec<T>> {
        let d = self.config.d_model;
        if ids.len() > self.config.max_seq {
            return Err(Error::Shape(format!(
                "sequence of {} tokens exceeds max_seq {}",
                ids.len(),
                self.config.max_seq
            )));
        }
        let tok = self.p(self.layout.enc_tok);
        let pos = self.p(self.layout.enc_pos);
        let mut x = Vec::with_capacity(ids.len() * d);
        for (i, &id) in ids.iter().enumerate() {
            self.check_token(id)?;
            let e = &tok[id as usize * d..(id as usize + 1) * d];
            let p = &pos[i * d..(i + 1) * d];
            x.extend(e.iter().zip(p).map(|(&a, &b)| a + b));
        }
        Ok(x)
    }

    pub(crate) fn embed_enc_bwd(&self, ids: &[u32], dx: &[T], grad: &mut [T]) {
        let d = self.config.d_model;
        let (tok, pos) = (self.layout.enc_tok, self.layout.enc_pos);
        for (i, &id) in ids.iter().enumerate() {
            let g = &dx[i * d..(i + 1) * d];
            for (j, &v) in g.iter().enumerate() {
                grad[tok.off + id as usize * d + j] += v;
                grad[pos.off + i * d + j] += v;
            }
        }
    }

    pub(crate) fn check_token(&self, id: u32) -> Result<()> {
        if id as usize >= self.config.vocab_size {
            return Err(Error::TokenOutOfRange {
                token: id,
                vocab: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// One pre-norm encoder layer applied in place to a `len × d` row.
    pub(crate) fn enc_layer(
        &self,
        l: usize,
        x: &mut [T],
        mask: &[u8],
        mut drop: Option<&mut Dropout<'_>>,
    ) -> EncCache<T> {
        let layer = self.layout.enc[l];
        let d = self.config.d_model;
        let len = x.len() / d;
        let mut ln1 = LnCache::default();
        let y1 = self.norm(&layer.ln1, x, &mut ln1);
        let kv = self.kv_proj(&layer.attn, &y1);
        let shape = AttnShape {
            groups: 1,
            sq: len,
            sk: len,
            heads: self.config.n_heads,
            d,
            shared_kv: true,
            causal: false,
        };
        let (attn, mut a) = self.attn_fwd(&layer.attn, &y1, &kv, shape, mask);
        let drop1 = maybe_mask(&mut drop, a.len());
        scale_in_place(&mut a, drop1.as_ref());
        for (v, &r) in x.iter_mut().zip(&a) {
            *v += r;
        }
        let mut ln2 = LnCache::default();
        let y2 = self.norm(&layer.ln2, x, &mut ln2);
        let (mlp, mut z) = self.mlp_fwd(&layer.mlp, &y2);
        let drop2 = maybe_mask(&mut drop, z.len());
        scale_in_place(&mut z, drop2.as_ref());
        for (v, &r) in x.iter_mut().zip(&z) {
            *v += r;
        }
        EncCache {
            ln1,
            y1,
            kv,
            attn,
            drop1,
            ln2,
            y2,
            mlp,
            drop2,
        }
    }

    /// Turns `dx` from the gradient at the layer output into the gradient at its input.
    pub(crate) fn enc_layer_bwd(&self, l: usize, c: &EncCache<T>, dx: &mut [T], grad: &mut [T]) {
        let layer = self.layout.enc[l];
        let mut dz = dx.to_vec();
        scale_in_place(&mut dz, c.drop2.as_ref());
        let mut dy2 = vec![T::zero(); dx.len()];
        self.mlp_bwd(&layer.mlp, &c.y2, &c.mlp, &dz, grad, &mut dy2);
        self.norm_bwd(&layer.ln2, &dy2, &c.ln2, grad, dx);

        let mut da = dx.to_vec();
        scale_in_place(&mut da, c.drop1.as_ref());
        let mut dy1 = vec![T::zero(); dx.len()];
        let mut dkv = vec![T::zero(); c.kv.len()];
        self.attn_bwd(&layer.attn, &c.y1, &c.kv, &c.attn, &da, grad, &mut dy1, &mut dkv);
        self.lin_bwd(&layer.attn.kv, &c.y1, &dkv, grad, Some(&mut dy1));
        self.norm_bwd(&layer.ln1, &dy1, &c.ln1, grad, dx);
    }

    /// Decoder inputs `[BOS, c1, …]` for `groups` prefixes of length `t`.
    pub(crate) fn embed_dec(&self, prefixes: &[u32], t: usize) -> Result<Vec<T>> {
        let d = self.config.d_model;
        if t > self.config.target_len {
            return Err(Error::Shape(format!(
                "decoder length {t} exceeds target_len {}",
                self.config.target_len
            )));
        }
        let tok = self.p(self.layout.dec_tok);
        let pos = self.p(self.layout.dec_pos);
        let mut x = Vec::with_capacity(prefixes.len() * d);
        for (i, &id) in prefixes.iter().enumerate() {
            self.check_token(id)?;
            let e = &tok[id as usize * d..(id as usize + 1) * d];
            let p = &pos[(i % t) * d..(i % t + 1) * d];
            x.extend(e.iter().zip(p).map(|(&a, &b)| a + b));
        }
        Ok(x)
    }

    pub(crate) fn embed_dec_bwd(&self, prefixes: &[u32], t: usize, dx: &[T], grad: &mut [T]) {
        let d = self.config.d_model;
        let (tok, pos) = (self.layout.dec_tok, self.layout.dec_pos);
        for (i, &id) in prefixes.iter().enumerate() {
            let g = &dx[i * d..(i + 1) * d];
            for (j, &v) in g.iter().enumerate() {
                grad[tok.off + id as usize * d + j] += v;
                grad[pos.off + (i % t) * d + j] += v;
            }
        }
    }

    /// Teacher-forcing inputs for a target: `[BOS, c1, …, c_{L-1}]`.
    pub(crate) fn shift_right(target: &[u32]) -> Vec<u32> {
        std::iter::once(BOS)
            .chain(target[..target.len() - 1].iter().copied())
            .collect()
    }

    /// Per-decoder-layer cross-attention keys/values of one encoder row.
    pub(crate) fn memory_kv(&self, mem: &[T]) -> Vec<Vec<T>> {
        self.layout
            .dec
            .iter()
            .map(|layer| self.kv_proj(&layer.cross, mem))
            .collect()
    }

    /// One decoder layer over `groups` sequences of length `t` that share
    /// the cross-attention memory `mem_kv` (`sk` rows).
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn dec_layer(
        &self,
        l: usize,
        x: &mut [T],
        groups: usize,
        t: usize,
        mem_kv: &[T],
        mem_mask: &[u8],
        mut drop: Option<&mut Dropout<'_>>,
    ) -> DecCache<T> {
        let layer = self.layout.dec[l];
        let d = self.config.d_model;
        let heads = self.config.n_heads;

        let mut ln1 = LnCache::default();
        let y1 = self.norm(&layer.ln1, x, &mut ln1);
        let self_kv = self.kv_proj(&layer.self_attn, &y1);
        let ones = vec![1u8; t];
        let shape = AttnShape {
            groups,
            sq: t,
            sk: t,
            heads,
            d,
            shared_kv: false,
            causal: true,
        };
        let (self_attn, mut a) = self.attn_fwd(&layer.self_attn, &y1, &self_kv, shape, &ones);
        let drop1 = maybe_mask(&mut drop, a.len());
        scale_in_place(&mut a, drop1.as_ref());
        for (v, &r) in x.iter_mut().zip(&a) {
            *v += r;
        }

        let mut ln2 = LnCache::default();
        let y2 = self.norm(&layer.ln2, x, &mut ln2);
        let shape = AttnShape {
            groups,
            sq: t,
            sk: mem_mask.len(),
            heads,
            d,
            shared_kv: true,
            causal: false,
        };
        let (cross, mut c) = self.attn_fwd(&layer.cross, &y2, mem_kv, shape, mem_mask);
        let drop2 = maybe_mask(&mut drop, c.len());
        scale_in_place(&mut c, drop2.as_ref());
        for (v, &r) in x.iter_mut().zip(&c) {
            *v += r;
        }

        let mut ln3 = LnCache::default();
        let y3 = self.norm(&layer.ln3, x, &mut ln3);
        let (mlp, mut z) = self.mlp_fwd(&layer.mlp, &y3);
        let drop3 = maybe_mask(&mut drop, z.len());
        scale_in_place(&mut z, drop3.as_ref());
        for (v, &r) in x.iter_mut().zip(&z) {
            *v += r;
        }
        DecCache {
            ln1,
            y1,
            self_kv,
            self_attn,
            drop1,
            ln2,
            y2,
            cross,
            drop2,
            ln3,
            y3,
            mlp,
            drop3,
        }
    }

    /// Backward of [`dec_layer`]; accumulates the memory key/value gradient
    /// into `dmem_kv`.
    pub(crate) fn dec_layer_bwd(
        &self,
        l: usize,
        c: &DecCache<T>,
        mem_kv: &[T],
        dx: &mut [T],
        dmem_kv: &mut [T],
        grad: &mut [T],
    ) {
        let layer = self.layout.dec[l];
        let n = dx.len();

        let mut dz = dx.to_vec();
        scale_in_place(&mut dz, c.drop3.as_ref());
        let mut dy3 = vec![T::zero(); n];
        self.mlp_bwd(&layer.mlp, &c.y3, &c.mlp, &dz, grad, &mut dy3);
        self.norm_bwd(&layer.ln3, &dy3, &c.ln3, grad, dx);

        let mut dc = dx.to_vec();
        scale_in_place(&mut dc, c.drop2.as_ref());
        let mut dy2 = vec![T::zero(); n];
        self.attn_bwd(&layer.cross, &c.y2, mem_kv, &c.cross, &dc, grad, &mut dy2, dmem_kv);
        self.norm_bwd(&layer.ln2, &dy2, &c.ln2, grad, dx);

        let mut da = dx.to_vec();
        scale_in_place(&mut da, c.drop1.as_ref());
        let mut dy1 = vec![T::zero(); n];
        let mut dkv = vec![T::zero(); c.self_kv.len()];
        self.attn_bwd(&layer.self_attn, &c.y1, &c.self_kv, &c.self_attn, &da, grad, &mut dy1, &mut dkv);
        self.lin_bwd(&layer.self_attn.kv, &c.y1, &dkv, grad, Some(&mut dy1));
        self.norm_bwd(&layer.ln1, &dy1, &c.ln1, grad, dx);
    }

    pub(crate) fn mem_kv_bwd(&self, l: usize, mem: &[T], dkv: &[T], grad: &mut [T], dmem: &mut [T]) {
        let layer = self.layout.dec[l];
        self.lin_bwd(&layer.cross.kv, mem, dkv, grad, Some(dmem));
    }

    /// Final norm and output projection: logits for every input row.
    pub(crate) fn head(&self, x: &[T], cache: &mut LnCache<T>) -> (Vec<T>, Vec<T>) {
        let y = self.norm(&self.layout.out_norm, x, cache);
        let logits = self.lin(&self.layout.head, &y);
        (y, logits)
    }

    pub(crate) fn head_bwd(&self, y: &[T], cache: &LnCache<T>, dlogits: &[T], grad: &mut [T], dx: &mut [T]) {
        let mut dy = vec![T::zero(); y.len()];
        let head = self.layout.head;
        self.lin_bwd(&head, y, dlogits, grad, Some(&mut dy));
        self.norm_bwd(&self.layout.out_norm, &dy, cache, grad, dx);
    }
}

/// Log-softmax of each `v`-wide row.
pub(crate) fn log_softmax<T: Scalar>(logits: &[T], v: usize) -> Vec<T> {
    let mut out = vec![T::zero(); logits.len()];
    for (row, o) in logits.chunks_exact(v).zip(out.chunks_exact_mut(v)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
        for (dst, &x) in o.iter_mut().zip(row) {
            *dst = x - lse;
        }
    }
    out
}
