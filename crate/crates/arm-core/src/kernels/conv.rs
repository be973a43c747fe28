//! 2-D convolution (stride 1, symmetric zero padding) and its two adjoints.
//!
//! Layout conventions: activations are `(N, C, H, W)`, filters are
//! `(OC, C, KH, KW)`, all row-major. The forward pass lowers each image to a
//! patch matrix (`im2col`) of shape `(C*KH*KW, OH*OW)` and multiplies by the
//! flattened filter bank; the adjoints reuse the same patch matrix through
//! stride tricks, so only one lowering routine exists.
//!
//! The three entry points form a closed family under differentiation:
//! the derivative of `forward` is expressed with `input_grad`/`weight_grad`,
//! and the derivatives of those two are expressed with `forward` and each
//! other. The graph layer relies on this to support second-order gradients.

use super::gemm;
use crate::tensor::Scalar;

/// Output spatial size for stride-1 convolution with padding `pad`.
#[inline]
pub fn out_dim(in_dim: usize, k: usize, pad: usize) -> Option<usize> {
    (in_dim + 2 * pad + 1).checked_sub(k)
}

/// Lowers one image `(C, H, W)` into the patch matrix `col_t` of shape
/// `(C*KH*KW, OH*OW)`: row `(c, kh, kw)`, column `(oh, ow)` holds
/// `x[c][oh + kh - pad][ow + kw - pad]`, zero outside the image.
#[allow(clippy::too_many_arguments)]
fn im2col_t<F: Scalar>(
    x: &[F],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    col: &mut [F],
) {
    debug_assert_eq!(col.len(), c_in * kh * kw * oh * ow);
    let ohw = oh * ow;
    for c in 0..c_in {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((c * kh + ki) * kw + kj) * ohw;
                // ox ranges over output columns; ix = ox + kj - pad is
                // inside the image for a contiguous span of ox, so the
                // row splits into zero edges around one slice copy.
                let shift = kj as isize - pad as isize;
                let ox_lo = (-shift).max(0) as usize;
                let ox_hi = (w as isize - shift).clamp(0, ow as isize) as usize;
                for oy in 0..oh {
                    let iy = (oy + ki) as isize - pad as isize;
                    let dst = &mut col[row + oy * ow..row + (oy + 1) * ow];
                    if iy < 0 || iy >= h as isize || ox_lo >= ox_hi {
                        dst.fill(F::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    dst[..ox_lo].fill(F::zero());
                    let src_lo = (ox_lo as isize + shift) as usize;
                    dst[ox_lo..ox_hi]
                        .copy_from_slice(&src_row[src_lo..src_lo + (ox_hi - ox_lo)]);
                    dst[ox_hi..].fill(F::zero());
                }
            }
        }
    }
}

/// Scatters a patch matrix back into an image, accumulating overlaps
/// (the adjoint of [`im2col_t`]).
#[allow(clippy::too_many_arguments)]
fn col2im_add<F: Scalar>(
    col: &[F],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    x: &mut [F],
) {
    let ohw = oh * ow;
    for c in 0..c_in {
        let plane = &mut x[c * h * w..(c + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((c * kh + ki) * kw + kj) * ohw;
                // Same contiguous in-bounds span as in `im2col_t`.
                let shift = kj as isize - pad as isize;
                let ox_lo = (-shift).max(0) as usize;
                let ox_hi = (w as isize - shift).clamp(0, ow as isize) as usize;
                if ox_lo >= ox_hi {
                    continue;
                }
                for oy in 0..oh {
                    let iy = (oy + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &col[row + oy * ow + ox_lo..row + oy * ow + ox_hi];
                    let dst_lo = (ox_lo as isize + shift) as usize;
                    let dst_row =
                        &mut plane[iy as usize * w + dst_lo..iy as usize * w + dst_lo + src.len()];
                    for (d, s) in dst_row.iter_mut().zip(src) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

/// Forward convolution: `out(N, OC, OH, OW) = x(N, C, H, W) ⊛ w(OC, C, KH, KW)`.
#[allow(clippy::too_many_arguments)]
pub fn forward<F: gemm::Gemm>(
    x: &[F],
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[F],
    oc: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    out: &mut [F],
) {
    let oh = out_dim(h, kh, pad).expect("checked by caller");
    let ow = out_dim(w, kw, pad).expect("checked by caller");
    let ckk = c_in * kh * kw;
    let ohw = oh * ow;
    debug_assert_eq!(out.len(), n * oc * ohw);
    let mut col = vec![F::zero(); ckk * ohw];
    for i in 0..n {
        im2col_t(&x[i * c_in * h * w..], c_in, h, w, kh, kw, pad, oh, ow, &mut col);
        // out_i(OC, OHW) = weight(OC, CKK) · col(CKK, OHW)
        gemm::matmul(oc, ckk, ohw, weight, &col, &mut out[i * oc * ohw..(i + 1) * oc * ohw]);
    }
}

/// Gradient w.r.t. the input: the transposed filter bank applied to `dout`.
#[allow(clippy::too_many_arguments)]
pub fn input_grad<F: gemm::Gemm>(
    dout: &[F],
    n: usize,
    oc: usize,
    weight: &[F],
    c_in: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    h: usize,
    w: usize,
    dx: &mut [F],
) {
    let oh = out_dim(h, kh, pad).expect("checked by caller");
    let ow = out_dim(w, kw, pad).expect("checked by caller");
    let ckk = c_in * kh * kw;
    let ohw = oh * ow;
    debug_assert_eq!(dx.len(), n * c_in * h * w);
    debug_assert_eq!(dout.len(), n * oc * ohw);
    dx.fill(F::zero());
    let mut dcol = vec![F::zero(); ckk * ohw];
    for i in 0..n {
        // dcol(CKK, OHW) = weightᵀ(CKK, OC) · dout_i(OC, OHW)
        gemm::matmul_tn(
            ckk,
            oc,
            ohw,
            weight,
            &dout[i * oc * ohw..(i + 1) * oc * ohw],
            &mut dcol,
        );
        col2im_add(&dcol, c_in, h, w, kh, kw, pad, oh, ow, &mut dx[i * c_in * h * w..]);
    }
}

/// Gradient w.r.t. the filters, summed over the batch.
#[allow(clippy::too_many_arguments)]
pub fn weight_grad<F: gemm::Gemm>(
    x: &[F],
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    dout: &[F],
    oc: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    dw: &mut [F],
) {
    let oh = out_dim(h, kh, pad).expect("checked by caller");
    let ow = out_dim(w, kw, pad).expect("checked by caller");
    let ckk = c_in * kh * kw;
    let ohw = oh * ow;
    debug_assert_eq!(dw.len(), oc * ckk);
    dw.fill(F::zero());
    let mut col = vec![F::zero(); ckk * ohw];
    for i in 0..n {
        im2col_t(&x[i * c_in * h * w..], c_in, h, w, kh, kw, pad, oh, ow, &mut col);
        // dw(OC, CKK) += dout_i(OC, OHW) · colᵀ(OHW, CKK); col is stored
        // (CKK, OHW) so this is the NT variant with B = col.
        F::gemm_strided(
            oc,
            ohw,
            ckk,
            F::one(),
            &dout[i * oc * ohw..(i + 1) * oc * ohw],
            ohw as isize,
            1,
            &col,
            1,
            ohw as isize,
            F::one(),
            dw,
            ckk as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution, the correctness oracle for the
    /// GEMM-based kernel.
    #[allow(clippy::too_many_arguments)]
    fn conv_naive(
        x: &[f64],
        n: usize,
        c_in: usize,
        h: usize,
        w: usize,
        weight: &[f64],
        oc: usize,
        k: usize,
        pad: usize,
    ) -> Vec<f64> {
        let oh = h + 2 * pad + 1 - k;
        let ow = w + 2 * pad + 1 - k;
        let mut out = vec![0.0; n * oc * oh * ow];
        for i in 0..n {
            for o in 0..oc {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for c in 0..c_in {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = oy as isize + ki as isize - pad as isize;
                                    let ix = ox as isize + kj as isize - pad as isize;
                                    if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                        let xv = x[((i * c_in + c) * h + iy as usize) * w
                                            + ix as usize];
                                        let wv = weight[((o * c_in + c) * k + ki) * k + kj];
                                        acc += xv * wv;
                                    }
                                }
                            }
                        }
                        out[((i * oc + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn pseudo(n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64) * scale).sin()).collect()
    }

    #[test]
    fn forward_matches_nested_loops() {
        for &(n, c, h, w, oc, k, pad) in &[
            (1usize, 1usize, 4usize, 4usize, 1usize, 3usize, 1usize),
            (2, 3, 6, 5, 4, 3, 0),
            (2, 2, 7, 7, 3, 5, 2),
            (1, 1, 5, 5, 2, 5, 2),
        ] {
            let x = pseudo(n * c * h * w, 0.31);
            let wt = pseudo(oc * c * k * k, 0.17);
            let oh = h + 2 * pad + 1 - k;
            let ow = w + 2 * pad + 1 - k;
            let mut out = vec![0.0; n * oc * oh * ow];
            forward(&x, n, c, h, w, &wt, oc, k, k, pad, &mut out);
            let want = conv_naive(&x, n, c, h, w, &wt, oc, k, pad);
            for (a, b) in out.iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b} (n={n} c={c} k={k} pad={pad})");
            }
        }
    }

    /// The adjoint identity <conv(x, w), u> = <x, input_grad(u, w)> must hold
    /// exactly (up to roundoff) for random u; this pins the adjoint kernels
    /// against the forward kernel independently of autodiff.
    #[test]
    fn adjoint_identities_hold() {
        let (n, c, h, w, oc, k, pad) = (2usize, 2usize, 6usize, 6usize, 3usize, 3usize, 1usize);
        let oh = h + 2 * pad + 1 - k;
        let ow = w + 2 * pad + 1 - k;
        let x = pseudo(n * c * h * w, 0.23);
        let wt = pseudo(oc * c * k * k, 0.41);
        let u = pseudo(n * oc * oh * ow, 0.11);

        let mut out = vec![0.0; n * oc * oh * ow];
        forward(&x, n, c, h, w, &wt, oc, k, k, pad, &mut out);
        let lhs: f64 = out.iter().zip(u.iter()).map(|(a, b)| a * b).sum();

        let mut dx = vec![0.0; x.len()];
        input_grad(&u, n, oc, &wt, c, k, k, pad, h, w, &mut dx);
        let rhs_x: f64 = x.iter().zip(dx.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs_x).abs() < 1e-10, "{lhs} vs {rhs_x}");

        let mut dw = vec![0.0; wt.len()];
        weight_grad(&x, n, c, h, w, &u, oc, k, k, pad, &mut dw);
        let rhs_w: f64 = wt.iter().zip(dw.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs_w).abs() < 1e-10, "{lhs} vs {rhs_w}");
    }

    #[test]
    fn shapes_follow_padding_rule() {
        assert_eq!(out_dim(28, 5, 2), Some(28));
        assert_eq!(out_dim(28, 5, 0), Some(24));
        assert_eq!(out_dim(3, 5, 0), None);
    }
}
