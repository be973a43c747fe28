//! Datasets and sampling: IDX ingestion, image rotation, the rotated-digit
//! domain construction, episode/batch samplers, and the synthetic testbed.
//!
//! The shared shape is a [`DomainDataset`]: an ordered list of domains,
//! each holding an example-major feature tensor and integer labels.
//! Training reads it through the samplers in [`sampler`]; evaluation pools
//! ([`ImagePool`]) stay unrotated and are rotated on demand so that every
//! validation pass can resample fresh points.

pub mod idx;
pub mod rotate;
pub mod rotmnist;
pub mod sampler;
pub mod synthetic;

pub use sampler::{sample_batch, sample_episode, BatchMode};
pub use synthetic::{bayes_nonadaptive_accuracy, make_synthetic};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

// ── Core dataset types ──────────────────────────────────────────────────

/// One training domain: `x` is example-major `(m, features...)`, `y` holds
/// the class indices.
#[derive(Debug, Clone)]
pub struct Domain {
    /// Human-readable tag for logs and result rows (e.g. `"rot090"`).
    pub name: String,
    pub x: Tensor<f32>,
    pub y: Vec<u32>,
}

impl Domain {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// A dataset partitioned into domains.
#[derive(Debug, Clone)]
pub struct DomainDataset {
    pub domains: Vec<Domain>,
    pub num_classes: usize,
}

impl DomainDataset {
    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn total_len(&self) -> usize {
        self.domains.iter().map(Domain::len).sum()
    }

    pub fn domain(&self, i: usize) -> Result<&Domain> {
        self.domains
            .get(i)
            .ok_or_else(|| Error::NotFound(format!("domain {i} of {}", self.domains.len())))
    }
}

/// An unrotated image pool (validation/test source): `(n, 1, h, w)` images
/// in `[0, 1)` plus labels.
#[derive(Debug, Clone)]
pub struct ImagePool {
    pub images: Tensor<f32>,
    pub labels: Vec<u32>,
}

impl ImagePool {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// `k` examples from a single domain.
#[derive(Debug, Clone)]
pub struct Group {
    pub domain: usize,
    pub x: Tensor<f32>,
    pub y: Vec<u32>,
}

/// A meta-batch: several single-domain groups.
#[derive(Debug, Clone)]
pub struct Episode {
    pub groups: Vec<Group>,
}

/// A flat batch whose examples may come from different domains.
#[derive(Debug, Clone)]
pub struct MixedBatch {
    pub x: Tensor<f32>,
    pub y: Vec<u32>,
    pub domains: Vec<usize>,
}

// ── Row gathering ───────────────────────────────────────────────────────

/// Copies the chosen example rows of an example-major tensor into a new
/// tensor with the same trailing dimensions.
pub fn gather_rows<F: Scalar>(t: &Tensor<F>, idx: &[usize]) -> Result<Tensor<F>> {
    if t.rank() == 0 {
        return Err(Error::shape("gather_rows", "rank >= 1 required"));
    }
    let n = t.shape()[0];
    let row = t.numel() / n.max(1);
    let mut out = Vec::with_capacity(idx.len() * row);
    let data = t.data();
    for &i in idx {
        if i >= n {
            return Err(Error::Contract(format!("gather_rows: index {i} out of {n}")));
        }
        out.extend_from_slice(&data[i * row..(i + 1) * row]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    Tensor::from_vec(&shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gather_rows_copies_in_order() {
        let t = Tensor::from_vec(&[3, 2], vec![0.0, 1.0, 10.0, 11.0, 20.0, 21.0]).unwrap();
        let g: Tensor<f64> = gather_rows(&t, &[2, 0, 2]).unwrap();
        assert_eq!(g.shape(), &[3, 2]);
        assert_eq!(g.data(), &[20.0, 21.0, 0.0, 1.0, 20.0, 21.0]);
    }

    #[test]
    fn gather_rows_rejects_out_of_range() {
        let t = Tensor::<f32>::zeros(&[2, 2]);
        assert!(gather_rows(&t, &[2]).is_err());
    }
}
