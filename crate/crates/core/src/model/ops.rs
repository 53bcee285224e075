//! Forward and backward kernels for the transformer building blocks.
//!
//! Backward functions accumulate (`+=`) into their gradient outputs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::{add_a_bt, add_at_b, gemm, Scalar, View};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Default)]
pub(crate) struct LnCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

pub(crate) fn layer_norm<T: Scalar>(
    x: &[T],
    d: usize,
    gain: &[T],
    bias: &[T],
    cache: &mut LnCache<T>,
) -> Vec<T> {
    let rows = x.len() / d;
    let inv_d = T::cast(1.0 / d as f64);
    let eps = T::cast(LN_EPS);
    let mut y = vec![T::zero(); x.len()];
    cache.xhat = vec![T::zero(); x.len()];
    cache.rstd = vec![T::zero(); rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().copied().sum::<T>() * inv_d;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rstd = T::one() / (var + eps).sqrt();
        cache.rstd[r] = rstd;
        for i in 0..d {
            let xh = (xr[i] - mean) * rstd;
            cache.xhat[r * d + i] = xh;
            y[r * d + i] = xh * gain[i] + bias[i];
        }
    }
    y
}

pub(crate) fn layer_norm_bwd<T: Scalar>(
    dy: &[T],
    d: usize,
    gain: &[T],
    cache: &LnCache<T>,
    dgain: &mut [T],
    dbias: &mut [T],
    dx: &mut [T],
) {
    let rows = dy.len() / d;
    let inv_d = T::cast(1.0 / d as f64);
    let mut dxhat = vec![T::zero(); d];
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for i in 0..d {
            dgain[i] += dyr[i] * xh[i];
            dbias[i] += dyr[i];
            dxhat[i] = dyr[i] * gain[i];
            mean_dxhat += dxhat[i];
            mean_dxhat_xhat += dxhat[i] * xh[i];
        }
        mean_dxhat *= inv_d;
        mean_dxhat_xhat *= inv_d;
        let rstd = cache.rstd[r];
        for i in 0..d {
            dx[r * d + i] += rstd * (dxhat[i] - mean_dxhat - xh[i] * mean_dxhat_xhat);
        }
    }
}

/// `x (rows×din) · w (din×dout) + b`.
pub(crate) fn linear<T: Scalar>(x: &[T], din: usize, w: &[T], b: &[T], dout: usize) -> Vec<T> {
    let rows = x.len() / din;
    let mut y = vec![T::zero(); rows * dout];
    for row in y.chunks_exact_mut(dout) {
        row.copy_from_slice(b);
    }
    gemm(
        rows,
        din,
        dout,
        T::one(),
        x,
        View::rows(din),
        w,
        View::rows(dout),
        T::one(),
        &mut y,
        View::rows(dout),
    );
    y
}

/// Parameter gradients of [`linear`], plus the input gradient when `dx` is given.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_bwd<T: Scalar>(
    x: &[T],
    dy: &[T],
    din: usize,
    dout: usize,
    w: &[T],
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    let rows = dy.len() / dout;
    add_at_b(x, dy, rows, din, dout, dw);
    for r in dy.chunks_exact(dout) {
        for (g, &v) in db.iter_mut().zip(r) {
            *g += v;
        }
    }
    if let Some(dx) = dx {
        add_a_bt(dy, w, rows, dout, din, dx);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// `tanh` through a single `exp`; libm's `tanhf` dominated step time.
#[inline]
fn fast_tanh<T: Scalar>(z: T) -> T {
    let two = T::one() + T::one();
    T::one() - two / ((two * z).exp() + T::one())
}

pub(crate) fn gelu<T: Scalar>(u: &[T]) -> Vec<T> {
    let c = T::cast(GELU_C);
    let a = T::cast(GELU_A);
    let half = T::cast(0.5);
    u.iter()
        .map(|&x| half * x * (T::one() + fast_tanh(c * (x + a * x * x * x))))
        .collect()
}

pub(crate) fn gelu_bwd<T: Scalar>(u: &[T], dg: &[T]) -> Vec<T> {
    let c = T::cast(GELU_C);
    let a = T::cast(GELU_A);
    let half = T::cast(0.5);
    let three = T::cast(3.0);
    u.iter()
        .zip(dg)
        .map(|(&x, &g)| {
            let t = fast_tanh(c * (x + a * x * x * x));
            let d = half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x);
            g * d
        })
        .collect()
}

/// Inverted-dropout scale factors: `0` or `1/(1-p)`.
pub(crate) fn dropout_mask<T: Scalar>(len: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<T> {
    let keep = T::cast(1.0 / (1.0 - p));
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < p {
                T::zero()
            } else {
                keep
            }
        })
        .collect()
}

pub(crate) fn scale_in_place<T: Scalar>(x: &mut [T], mask: Option<&Vec<T>>) {
    if let Some(m) = mask {
        for (v, &s) in x.iter_mut().zip(m) {
            *v *= s;
        }
    }
}

/// Geometry of one multi-head attention call.
///
/// Queries come in `groups` blocks of `sq` rows; keys/values are `sk` rows,
/// either one block shared by all groups or one block per group.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnShape {
    pub groups: usize,
    pub sq: usize,
    pub sk: usize,
    pub heads: usize,
    pub d: usize,
    pub shared_kv: bool,
    pub causal: bool,
}

impl AttnShape {
    fn kv_base(&self, g: usize) -> usize {
        if self.shared_kv {
            0
        } else {
            g * self.sk * 2 * self.d
        }
    }

    pub fn probs_len(&self) -> usize {
        self.groups * self.heads * self.sq * self.sk
    }
}

/// Scaled dot-product attention. `q` is `[groups·sq, d]`, `kv` holds keys in
/// columns `0..d` and values in `d..2d`. Masked keys get probability exactly 0.
pub(crate) fn attention<T: Scalar>(
    shape: AttnShape,
    q: &[T],
    kv: &[T],
    key_mask: &[u8],
    probs: &mut [T],
    ctx: &mut [T],
) {
    let AttnShape {
        groups,
        sq,
        sk,
        heads,
        d,
        causal,
        ..
    } = shape;
    let dh = d / heads;
    let scale = T::cast(1.0 / (dh as f64).sqrt());
    for g in 0..groups {
        let kvb = shape.kv_base(g);
        for h in 0..heads {
            let p = &mut probs[((g * heads + h) * sq) * sk..((g * heads + h + 1) * sq) * sk];
            gemm(
                sq,
                dh,
                sk,
                scale,
                &q[g * sq * d + h * dh..],
                View::rows(d),
                &kv[kvb + h * dh..],
                View::transposed(2 * d),
                T::zero(),
                p,
                View::rows(sk),
            );
            for i in 0..sq {
                let row = &mut p[i * sk..(i + 1) * sk];
                let visible = |j: usize| key_mask[j] != 0 && (!causal || j <= i);
                let mut max = T::neg_infinity();
                for (j, &v) in row.iter().enumerate() {
                    if visible(j) && v > max {
                        max = v;
                    }
                }
                let mut sum = T::zero();
                for (j, v) in row.iter_mut().enumerate() {
                    if visible(j) {
                        *v = (*v - max).exp();
                        sum += *v;
                    } else {
                        *v = T::zero();
                    }
                }
                let inv = T::one() / sum;
                for v in row.iter_mut() {
                    *v *= inv;
                }
            }
            gemm(
                sq,
                sk,
                dh,
                T::one(),
                p,
                View::rows(sk),
                &kv[kvb + d + h * dh..],
                View::rows(2 * d),
                T::zero(),
                &mut ctx[g * sq * d + h * dh..],
                View::rows(d),
            );
        }
    }
}

/// Backward of [`attention`]; accumulates into `dq` and `dkv`.
pub(crate) fn attention_bwd<T: Scalar>(
    shape: AttnShape,
    q: &[T],
    kv: &[T],
    probs: &[T],
    dctx: &[T],
    dq: &mut [T],
    dkv: &mut [T],
) {
    let AttnShape {
        groups,
        sq,
        sk,
        heads,
        d,
        ..
    } = shape;
    let dh = d / heads;
    let scale = T::cast(1.0 / (dh as f64).sqrt());
    let mut dp = vec![T::zero(); sq * sk];
    for g in 0..groups {
        let kvb = shape.kv_base(g);
        for h in 0..heads {
            let p = &probs[((g * heads + h) * sq) * sk..((g * heads + h + 1) * sq) * sk];
            let dctx_h = &dctx[g * sq * d + h * dh..];
            // dP = dctx_h · V_hᵀ
            gemm(
                sq,
                dh,
                sk,
                T::one(),
                dctx_h,
                View::rows(d),
                &kv[kvb + d + h * dh..],
                View::transposed(2 * d),
                T::zero(),
                &mut dp,
                View::rows(sk),
            );
            // dV_h += Pᵀ · dctx_h
            gemm(
                sk,
                sq,
                dh,
                T::one(),
                p,
                View::transposed(sk),
                dctx_h,
                View::rows(d),
                T::one(),
                &mut dkv[kvb + d + h * dh..],
                View::rows(2 * d),
            );
            for i in 0..sq {
                let pr = &p[i * sk..(i + 1) * sk];
                let dr = &mut dp[i * sk..(i + 1) * sk];
                let dot: T = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
                for (v, &pv) in dr.iter_mut().zip(pr) {
                    *v = pv * (*v - dot) * scale;
                }
            }
            // dQ_h += dS · K_h
            gemm(
                sq,
                sk,
                dh,
                T::one(),
                &dp,
                View::rows(sk),
                &kv[kvb + h * dh..],
                View::rows(2 * d),
                T::one(),
                &mut dq[g * sq * d + h * dh..],
                View::rows(d),
            );
            // dK_h += dSᵀ · Q_h
            gemm(
                sk,
                sq,
                dh,
                T::one(),
                &dp,
                View::transposed(sk),
                &q[g * sq * d + h * dh..],
                View::rows(d),
                T::one(),
                &mut dkv[kvb + h * dh..],
                View::rows(2 * d),
            );
        }
    }
}
