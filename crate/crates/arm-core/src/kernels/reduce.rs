//! Axis reductions and broadcasting.
//!
//! Reductions accumulate in `f64` whatever the storage dtype. This costs a
//! few percent of throughput and buys two properties the framework checks
//! for: batch statistics that are permutation-stable to ~1e-9, and means
//! over tens of thousands of `f32` terms that do not drift.

use crate::tensor::Scalar;

/// Sum (or mean, when `mean` is true) of `x` over the axes set in `mask`
/// (bit `i` = axis `i`). The result is written row-major into `out`, whose
/// length must equal the product of the kept dims.
pub fn reduce<F: Scalar>(x: &[F], shape: &[usize], mask: u32, mean: bool, out: &mut [F]) {
    let rank = shape.len();
    let reduced_count: usize = shape
        .iter()
        .enumerate()
        .filter(|(i, _)| mask >> i & 1 == 1)
        .map(|(_, &d)| d)
        .product();
    let scale = if mean { 1.0 / reduced_count.max(1) as f64 } else { 1.0 };

    // Whole-tensor reduction.
    if (0..rank).all(|i| mask >> i & 1 == 1) || rank == 0 {
        let acc: f64 = x.iter().map(|v| v.as_f64()).sum();
        out[0] = F::from_f64(acc * scale);
        return;
    }

    // Rank-4 channel reduction (N, C, H, W) -> (C,), the batch-norm hot path.
    if rank == 4 && mask == 0b1101 {
        let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
        let mut acc = vec![0.0f64; c];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * hw;
                let mut s = 0.0f64;
                for v in &x[base..base + hw] {
                    s += v.as_f64();
                }
                acc[ch] += s;
            }
        }
        for (o, a) in out.iter_mut().zip(acc.iter()) {
            *o = F::from_f64(a * scale);
        }
        return;
    }

    // Leading-axis reduction (N, rest...) -> (rest...).
    if mask == 0b1 {
        let n = shape[0];
        let rest: usize = shape[1..].iter().product();
        let mut acc = vec![0.0f64; rest];
        for i in 0..n {
            let row = &x[i * rest..(i + 1) * rest];
            for (a, v) in acc.iter_mut().zip(row.iter()) {
                *a += v.as_f64();
            }
        }
        for (o, a) in out.iter_mut().zip(acc.iter()) {
            *o = F::from_f64(a * scale);
        }
        return;
    }

    // Row reduction (N, C) -> (N,).
    if rank == 2 && mask == 0b10 {
        let (n, c) = (shape[0], shape[1]);
        for i in 0..n {
            let s: f64 = x[i * c..(i + 1) * c].iter().map(|v| v.as_f64()).sum();
            out[i] = F::from_f64(s * scale);
        }
        return;
    }

    // Generic path: walk the input row-major, mapping each element to its
    // output slot through strides that are zero on reduced axes.
    let mut out_strides = vec![0usize; rank];
    let mut acc_len = 1usize;
    for i in (0..rank).rev() {
        if mask >> i & 1 == 0 {
            out_strides[i] = acc_len;
            acc_len *= shape[i];
        }
    }
    let mut acc = vec![0.0f64; acc_len];
    let mut idx = vec![0usize; rank];
    for v in x.iter() {
        let mut o = 0usize;
        for i in 0..rank {
            o += idx[i] * out_strides[i];
        }
        acc[o] += v.as_f64();
        // row-major increment
        for i in (0..rank).rev() {
            idx[i] += 1;
            if idx[i] < shape[i] {
                break;
            }
            idx[i] = 0;
        }
    }
    for (o, a) in out.iter_mut().zip(acc.iter()) {
        *o = F::from_f64(a * scale);
    }
}

/// Expands `x` of `in_shape` to `out_shape`; the shapes must have equal rank
/// and each input dim must be 1 or equal to the output dim (a rank-0 input
/// broadcasts to anything). Validation happens in the graph layer.
pub fn broadcast<F: Scalar>(x: &[F], in_shape: &[usize], out_shape: &[usize], out: &mut [F]) {
    if x.len() == 1 {
        out.fill(x[0]);
        return;
    }
    if in_shape[0] == 1 && in_shape[1..] == out_shape[1..] {
        // Tile a leading axis: repeat the whole block.
        for chunk in out.chunks_exact_mut(x.len()) {
            chunk.copy_from_slice(x);
        }
        return;
    }
    let rank = out_shape.len();
    let mut in_strides = vec![0usize; rank];
    let mut acc = 1usize;
    for i in (0..rank).rev() {
        if in_shape[i] != 1 {
            in_strides[i] = acc;
            acc *= in_shape[i];
        }
    }
    let mut idx = vec![0usize; rank];
    for o in out.iter_mut() {
        let mut s = 0usize;
        for i in 0..rank {
            s += idx[i] * in_strides[i];
        }
        *o = x[s];
        for i in (0..rank).rev() {
            idx[i] += 1;
            if idx[i] < out_shape[i] {
                break;
            }
            idx[i] = 0;
        }
    }
}
