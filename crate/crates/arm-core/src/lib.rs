//! Adaptive risk minimization: meta-training across domains with test-time
//! adaptation from unlabeled batches or streams.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`], [`kernels`], [`graph`]: dense tensors and reverse-mode
//!   autodiff on an append-only tape whose primitive set is closed under
//!   differentiation (second-order gradients work, which the learned-loss
//!   adaptation needs).
//! - [`nn`]: layers, the reference convolutional architectures, batch norm
//!   with three statistics modes, initialization, optimizers, checkpoints.
//! - [`data`]: IDX image parsing, image rotation, the rotated-digit
//!   domain-shift benchmark, episodic samplers, and a synthetic testbed with
//!   a numerically integrated Bayes-accuracy oracle.
//! - [`arm`]: the meta-training loop and the three adaptation mechanisms
//!   (contextual, batch-norm moments, learned loss), plus baselines.
//! - [`streamer`]: constant-memory streaming adaptation state.
//! - [`eval`]: domain-level evaluation protocol, checkpoint selection,
//!   seed-level summaries.
//! - [`verify`]: the self-check suite (gradient checks against finite
//!   differences, streaming/batch equivalence).

pub mod arm;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod kernels;
pub mod nn;
pub mod rng;
pub mod streamer;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use graph::{finite_diff_check, Gradients, Graph, NodeId, Op};
pub use tensor::{Dtype, Scalar, Tensor};
