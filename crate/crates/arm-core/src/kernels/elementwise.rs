//! Elementwise maps, channel-vector arithmetic, channel concatenation, and
//! the softmax / cross-entropy pair.

use crate::tensor::Scalar;

pub fn binary<F: Scalar>(a: &[F], b: &[F], out: &mut [F], f: impl Fn(F, F) -> F) {
    for ((o, &x), &y) in out.iter_mut().zip(a.iter()).zip(b.iter()) {
        *o = f(x, y);
    }
}

pub fn unary<F: Scalar>(a: &[F], out: &mut [F], f: impl Fn(F) -> F) {
    for (o, &x) in out.iter_mut().zip(a.iter()) {
        *o = f(x);
    }
}

/// `out = u ⊙ [x_ref > 0]` — the backward map of ReLU, itself a primitive so
/// that second-order passes can differentiate through it (w.r.t. `u`).
pub fn relu_mask_mul<F: Scalar>(x_ref: &[F], u: &[F], out: &mut [F]) {
    for ((o, &x), &g) in out.iter_mut().zip(x_ref.iter()).zip(u.iter()) {
        *o = if x > F::zero() { g } else { F::zero() };
    }
}

/// Applies `f(x[n,c,..], v[c])` across a tensor whose axis 1 is the channel
/// axis; `inner` is the product of the dims after the channel axis.
pub fn channel_zip<F: Scalar>(
    x: &[F],
    v: &[F],
    n: usize,
    c: usize,
    inner: usize,
    out: &mut [F],
    f: impl Fn(F, F) -> F,
) {
    for i in 0..n {
        for ch in 0..c {
            let vc = v[ch];
            let base = (i * c + ch) * inner;
            for j in 0..inner {
                out[base + j] = f(x[base + j], vc);
            }
        }
    }
}

/// Concatenates two tensors along axis 1 (channels).
#[allow(clippy::too_many_arguments)]
pub fn concat_channels<F: Scalar>(
    a: &[F],
    ca: usize,
    b: &[F],
    cb: usize,
    n: usize,
    inner: usize,
    out: &mut [F],
) {
    let (sa, sb, so) = (ca * inner, cb * inner, (ca + cb) * inner);
    for i in 0..n {
        out[i * so..i * so + sa].copy_from_slice(&a[i * sa..(i + 1) * sa]);
        out[i * so + sa..(i + 1) * so].copy_from_slice(&b[i * sb..(i + 1) * sb]);
    }
}

/// Extracts channels `[start, start+len)` along axis 1.
pub fn slice_channels<F: Scalar>(
    x: &[F],
    c: usize,
    start: usize,
    len: usize,
    n: usize,
    inner: usize,
    out: &mut [F],
) {
    let (sx, so) = (c * inner, len * inner);
    for i in 0..n {
        let src = i * sx + start * inner;
        out[i * so..(i + 1) * so].copy_from_slice(&x[src..src + so]);
    }
}

/// Writes `x` into a zero tensor with `total` channels at channel offset
/// `start` (adjoint of [`slice_channels`]).
pub fn embed_channels<F: Scalar>(
    x: &[F],
    len: usize,
    start: usize,
    total: usize,
    n: usize,
    inner: usize,
    out: &mut [F],
) {
    out.fill(F::zero());
    let (sx, so) = (len * inner, total * inner);
    for i in 0..n {
        let dst = i * so + start * inner;
        out[dst..dst + sx].copy_from_slice(&x[i * sx..(i + 1) * sx]);
    }
}

/// Row-wise softmax over `(n, c)` logits, max-subtracted for stability.
pub fn softmax<F: Scalar>(x: &[F], n: usize, c: usize, out: &mut [F]) {
    for i in 0..n {
        let row = &x[i * c..(i + 1) * c];
        let dst = &mut out[i * c..(i + 1) * c];
        let m = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
        let mut denom = 0.0f64;
        for (d, &v) in dst.iter_mut().zip(row.iter()) {
            let e = (v - m).exp();
            *d = e;
            denom += e.as_f64();
        }
        let inv = F::from_f64(1.0 / denom);
        for d in dst.iter_mut() {
            *d = *d * inv;
        }
    }
}

/// Fused per-example softmax cross-entropy: `loss_i = lse(x_i) − x_i[y_i]`,
/// computed via log-sum-exp with max subtraction.
pub fn softmax_cross_entropy<F: Scalar>(x: &[F], n: usize, c: usize, labels: &[u32], out: &mut [F]) {
    for i in 0..n {
        let row = &x[i * c..(i + 1) * c];
        let m = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
        let mut denom = 0.0f64;
        for &v in row.iter() {
            denom += (v - m).exp().as_f64();
        }
        let lse = m.as_f64() + denom.ln();
        out[i] = F::from_f64(lse - row[labels[i] as usize].as_f64());
    }
}
