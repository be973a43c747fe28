//! Spatial pooling kernels (window = stride, the only configuration the
//! architectures use). Max pooling records flat argmax indices so its
//! backward pass is an index scatter; ties resolve to the first maximum in
//! row-major window order, which keeps runs bit-reproducible.

use crate::tensor::Scalar;

/// Max pooling over non-overlapping `s×s` windows.
///
/// `indices[j]` receives the flat index (into the full input buffer) of the
/// element that produced output `j`.
pub fn maxpool<F: Scalar>(
    x: &[F],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    s: usize,
    out: &mut [F],
    indices: &mut [u32],
) {
    let (oh, ow) = (h / s, w / s);
    debug_assert_eq!(out.len(), n * c * oh * ow);
    debug_assert_eq!(indices.len(), out.len());
    let mut j = 0;
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = x[base + (oy * s) * w + ox * s];
                    let mut best_idx = base + (oy * s) * w + ox * s;
                    for ky in 0..s {
                        for kx in 0..s {
                            let idx = base + (oy * s + ky) * w + (ox * s + kx);
                            let v = x[idx];
                            if v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    out[j] = best;
                    indices[j] = best_idx as u32;
                    j += 1;
                }
            }
        }
    }
}

/// Scatter of pooled gradients back to input positions (adjoint of
/// [`maxpool`] at fixed indices).
pub fn max_unpool<F: Scalar>(grad_out: &[F], indices: &[u32], dx: &mut [F]) {
    dx.fill(F::zero());
    for (g, &idx) in grad_out.iter().zip(indices.iter()) {
        dx[idx as usize] += *g;
    }
}

/// Gather of input-shaped values at pooled argmax positions (adjoint of
/// [`max_unpool`] at fixed indices).
pub fn pool_gather<F: Scalar>(values: &[F], indices: &[u32], out: &mut [F]) {
    for (o, &idx) in out.iter_mut().zip(indices.iter()) {
        *o = values[idx as usize];
    }
}

/// Average pooling over non-overlapping `s×s` windows.
pub fn avgpool<F: Scalar>(x: &[F], n: usize, c: usize, h: usize, w: usize, s: usize, out: &mut [F]) {
    let (oh, ow) = (h / s, w / s);
    debug_assert_eq!(out.len(), n * c * oh * ow);
    let inv = F::from_f64(1.0 / ((s * s) as f64));
    let mut j = 0;
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f64;
                    for ky in 0..s {
                        for kx in 0..s {
                            acc += x[base + (oy * s + ky) * w + (ox * s + kx)].as_f64();
                        }
                    }
                    out[j] = F::from_f64(acc) * inv;
                    j += 1;
                }
            }
        }
    }
}

/// Adjoint of [`avgpool`]: spreads each output gradient uniformly over its
/// window.
pub fn avg_unpool<F: Scalar>(
    grad_out: &[F],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    s: usize,
    dx: &mut [F],
) {
    let (oh, ow) = (h / s, w / s);
    debug_assert_eq!(dx.len(), n * c * h * w);
    let inv = F::from_f64(1.0 / ((s * s) as f64));
    let mut j = 0;
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = grad_out[j] * inv;
                    j += 1;
                    for ky in 0..s {
                        for kx in 0..s {
                            dx[base + (oy * s + ky) * w + (ox * s + kx)] = g;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxpool_picks_first_max_on_ties() {
        // 2x2 window of equal values: index 0 of the window must win.
        let x = vec![3.0f32, 3.0, 3.0, 3.0];
        let mut out = vec![0.0f32; 1];
        let mut idx = vec![0u32; 1];
        maxpool(&x, 1, 1, 2, 2, 2, &mut out, &mut idx);
        assert_eq!(out[0], 3.0);
        assert_eq!(idx[0], 0);
    }

    #[test]
    fn maxpool_values_and_indices() {
        // One channel, 4x4: windows are [[.,1],[2,.]] style.
        #[rustfmt::skip]
        let x: Vec<f32> = vec![
            1.0, 2.0,   0.0, 0.5,
            3.0, 0.0,   0.25, 0.0,

            0.0, 0.0,   9.0, 1.0,
            0.0, 7.0,   0.0, 2.0,
        ];
        let mut out = vec![0.0f32; 4];
        let mut idx = vec![0u32; 4];
        maxpool(&x, 1, 1, 4, 4, 2, &mut out, &mut idx);
        assert_eq!(out, vec![3.0, 0.5, 7.0, 9.0]);
        assert_eq!(idx, vec![4, 3, 13, 10]);
    }

    #[test]
    fn unpool_scatters_to_argmax() {
        let x: Vec<f32> = vec![1.0, 2.0, 4.0, 3.0];
        let mut out = vec![0.0f32; 1];
        let mut idx = vec![0u32; 1];
        maxpool(&x, 1, 1, 2, 2, 2, &mut out, &mut idx);
        let mut dx = vec![9.0f32; 4];
        max_unpool(&[5.0f32], &idx, &mut dx);
        assert_eq!(dx, vec![0.0, 0.0, 5.0, 0.0]);
    }

    #[test]
    fn avgpool_means_windows() {
        let x: Vec<f32> = vec![1.0, 2.0, 3.0, 4.0];
        let mut out = vec![0.0f32; 1];
        avgpool(&x, 1, 1, 2, 2, 2, &mut out);
        assert_eq!(out[0], 2.5);
        let mut dx = vec![0.0f32; 4];
        avg_unpool(&[1.0f32], 1, 1, 2, 2, 2, &mut dx);
        assert_eq!(dx, vec![0.25; 4]);
    }
}
