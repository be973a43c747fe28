//! Crate-wide error type.
//!
//! Every fallible operation in the library reports through [`Error`]; the
//! variants carry enough context (op names, shapes, byte offsets, step
//! counters) that a failure can be diagnosed from the message alone.

use thiserror::Error;

/// Errors produced by the numerics, data, training, and evaluation layers.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor operands have incompatible shapes for the named operation.
    #[error("shape mismatch in `{op}`: {detail}")]
    ShapeMismatch { op: String, detail: String },

    /// An operation produced a NaN or infinite value from finite inputs.
    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: String },

    /// An API contract was violated (e.g. backward from a non-scalar node).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A binary input (IDX file, checkpoint) failed to parse.
    #[error("format error in {path} at byte {offset}: {detail}")]
    Format {
        path: String,
        offset: u64,
        detail: String,
    },

    /// A requested item (parameter, checkpoint, domain) does not exist.
    #[error("not found: {0}")]
    NotFound(String),

    /// Training produced a non-finite loss; the run is aborted.
    #[error(
        "training diverged at step {step} (epoch {epoch}): loss = {loss}, domains in batch: {domains:?}"
    )]
    TrainDiverged {
        step: u64,
        epoch: usize,
        loss: f64,
        domains: Vec<usize>,
    },

    /// A streaming-moment update produced an impossible (negative) variance.
    #[error("streaming variance update produced {value} at t = {t}; inputs are numerically inconsistent")]
    NegativeVariance { value: f64, t: u64 },

    /// Configuration file or value rejected.
    #[error("config error: {0}")]
    Config(String),

    /// Underlying I/O failure, annotated with the path involved.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Shorthand for a [`Error::ShapeMismatch`].
    pub fn shape(op: &str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op: op.to_string(),
            detail: detail.into(),
        }
    }

    /// Shorthand for wrapping an I/O error with its path.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
