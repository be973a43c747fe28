//! Matrix multiplication over row-major buffers.
//!
//! The heavy lifting is delegated to `matrixmultiply`, which carries packed
//! cache-blocked microkernels (AVX2/AVX-512 with runtime detection). The
//! wrappers here fix the row-major convention and express the transposed
//! operands the convolution kernels need through strides, so no operand is
//! ever materialized twice.

use crate::tensor::Scalar;

/// `C = alpha * A(m,k) * B(k,n) + beta * C`, with explicit element strides.
///
/// `rsx`/`csx` are the row/column strides of each operand in elements.
pub trait Gemm: Scalar {
    #[allow(clippy::too_many_arguments)]
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );
}

impl Gemm for f32 {
    #[inline]
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: &[f32],
        rsa: isize,
        csa: isize,
        b: &[f32],
        rsb: isize,
        csb: isize,
        beta: f32,
        c: &mut [f32],
        rsc: isize,
        csc: isize,
    ) {
        debug_assert!(buffer_covers(a.len(), m, k, rsa, csa));
        debug_assert!(buffer_covers(b.len(), k, n, rsb, csb));
        debug_assert!(buffer_covers(c.len(), m, n, rsc, csc));
        // Safety: strides are validated against the buffer lengths above;
        // matrixmultiply requires only that all indexed elements are in
        // bounds and the output does not alias the inputs (distinct slices
        // guarantee this under Rust's borrow rules).
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            );
        }
    }
}

impl Gemm for f64 {
    #[inline]
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: &[f64],
        rsa: isize,
        csa: isize,
        b: &[f64],
        rsb: isize,
        csb: isize,
        beta: f64,
        c: &mut [f64],
        rsc: isize,
        csc: isize,
    ) {
        debug_assert!(buffer_covers(a.len(), m, k, rsa, csa));
        debug_assert!(buffer_covers(b.len(), k, n, rsb, csb));
        debug_assert!(buffer_covers(c.len(), m, n, rsc, csc));
        // Safety: see the f32 impl.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            );
        }
    }
}

/// Checks that the largest index reachable with the given strides fits in a
/// buffer of `len` elements (debug builds only).
fn buffer_covers(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) -> bool {
    if rows == 0 || cols == 0 {
        return true;
    }
    let max = (rows as isize - 1) * rs + (cols as isize - 1) * cs;
    max >= 0 && (max as usize) < len
}

/// Row-major `C(m,n) = A(m,k) * B(k,n)`.
pub fn matmul<F: Gemm>(m: usize, k: usize, n: usize, a: &[F], b: &[F], c: &mut [F]) {
    F::gemm_strided(
        m,
        k,
        n,
        F::one(),
        a,
        k as isize,
        1,
        b,
        n as isize,
        1,
        F::zero(),
        c,
        n as isize,
        1,
    );
}

/// Row-major `C(m,n) = Aᵀ * B` where `A` is stored as `(k, m)`.
pub fn matmul_tn<F: Gemm>(m: usize, k: usize, n: usize, a: &[F], b: &[F], c: &mut [F]) {
    F::gemm_strided(
        m,
        k,
        n,
        F::one(),
        a,
        1,
        m as isize,
        b,
        n as isize,
        1,
        F::zero(),
        c,
        n as isize,
        1,
    );
}

/// Row-major `C(m,n) = A * Bᵀ` where `B` is stored as `(n, k)`.
pub fn matmul_nt<F: Gemm>(m: usize, k: usize, n: usize, a: &[F], b: &[F], c: &mut [F]) {
    F::gemm_strided(
        m,
        k,
        n,
        F::one(),
        a,
        k as isize,
        1,
        b,
        1,
        k as isize,
        F::zero(),
        c,
        n as isize,
        1,
    );
}
