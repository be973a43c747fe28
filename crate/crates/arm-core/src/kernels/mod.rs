//! Low-level compute kernels.
//!
//! These are plain functions over flat buffers; shape validation and
//! finiteness checking happen one level up in the graph layer. All
//! reductions accumulate in `f64` so batch statistics are stable (to ~1e-9)
//! under permutation of the batch — several framework invariants depend on
//! that.

pub mod conv;
pub mod elementwise;
pub mod gemm;
pub mod pool;
pub mod reduce;
