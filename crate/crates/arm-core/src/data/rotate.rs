//! Image rotation: counterclockwise about the pixel-grid center with
//! bilinear interpolation and zero fill.
//!
//! The inverse mapping applies the rotation matrix to output offsets in
//! (column-right, row-down) coordinates, which matches the usual image
//! convention (a positive angle turns content counterclockwise, and 90°
//! agrees with the exact array rotation). Sample positions and weights are
//! computed in `f64`; a 0° angle reproduces the input bit for bit.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Rotates one `h × w` plane by `degrees` counterclockwise.
pub fn rotate_image(img: &[f32], h: usize, w: usize, degrees: f32) -> Vec<f32> {
    debug_assert_eq!(img.len(), h * w);
    let (sin, cos) = (degrees as f64).to_radians().sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = vec![0.0f32; h * w];
    for r in 0..h {
        let dy = r as f64 - cy;
        for c in 0..w {
            let dx = c as f64 - cx;
            let sx = cos * dx - sin * dy + cx;
            let sy = sin * dx + cos * dy + cy;
            let (fx, fy) = (sx - sx.floor(), sy - sy.floor());
            let (x0, y0) = (sx.floor() as isize, sy.floor() as isize);
            let mut acc = 0.0f64;
            for (row, wy) in [(y0, 1.0 - fy), (y0 + 1, fy)] {
                if wy == 0.0 || row < 0 || row >= h as isize {
                    continue;
                }
                for (col, wx) in [(x0, 1.0 - fx), (x0 + 1, fx)] {
                    if wx == 0.0 || col < 0 || col >= w as isize {
                        continue;
                    }
                    acc += wy * wx * img[row as usize * w + col as usize] as f64;
                }
            }
            out[r * w + c] = acc as f32;
        }
    }
    out
}

/// Rotates every plane of a `(n, c, h, w)` batch by the same angle.
pub fn rotate_batch(images: &Tensor<f32>, degrees: f32) -> Result<Tensor<f32>> {
    let shape = images.shape();
    if shape.len() != 4 {
        return Err(Error::shape("rotate_batch", format!("rank-4 input required, got {shape:?}")));
    }
    let (h, w) = (shape[2], shape[3]);
    let plane = h * w;
    let mut out = Vec::with_capacity(images.numel());
    for p in images.data().chunks_exact(plane) {
        out.extend_from_slice(&rotate_image(p, h, w, degrees));
    }
    Tensor::from_vec(shape, out)
}
