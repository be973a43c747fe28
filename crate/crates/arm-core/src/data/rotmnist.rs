//! The rotated-digit domain construction: 14 rotation domains with a
//! skewed size profile over a 54000/6000 train/validation split.
//!
//! Training images are drawn from the 54000-image pool with replacement
//! (a source digit may appear in several rotation domains) and rotated
//! eagerly; the validation and test pools stay unrotated so evaluation can
//! resample fresh points and rotate on demand.

use crate::data::rotate::rotate_batch;
use crate::data::{gather_rows, Domain, DomainDataset, ImagePool};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

use rand::seq::SliceRandom;
use rand::Rng;

/// Rotation angles, in degrees, of the 14 domains.
pub const ANGLES: [f32; 14] = [
    0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0, 110.0, 120.0, 130.0,
];

/// Training examples per domain (32292 in total): common rotations are
/// plentiful, rare ones nearly absent.
pub const DOMAIN_COUNTS: [usize; 14] = [
    7560, 7560, 7560, 2160, 2160, 2160, 648, 648, 648, 324, 324, 324, 108, 108,
];

/// Size of the training pool carved out of the 60000 source images; the
/// remaining 6000 are held out for validation.
pub const TRAIN_POOL: usize = 54000;

/// The assembled benchmark.
#[derive(Debug, Clone)]
pub struct RotatedMnist {
    pub train: DomainDataset,
    /// Held-out originals, unrotated; validation rotates samples on demand.
    pub val_pool: ImagePool,
    /// The untouched test originals, rotated on demand per domain.
    pub test_pool: ImagePool,
}

/// Display tag for a rotation domain, e.g. `rot090`.
pub fn domain_name(degrees: f32) -> String {
    format!("rot{:03}", degrees as i32)
}

/// Builds the benchmark from the full source sets (60000 train, 10000
/// test source images).
pub fn build_rotated_mnist(train: &ImagePool, test: ImagePool, seed: u64) -> Result<RotatedMnist> {
    if train.len() != 60000 {
        return Err(Error::Contract(format!(
            "rotated-digit construction needs the 60000-image training set, got {}",
            train.len()
        )));
    }
    if test.len() != 10000 {
        return Err(Error::Contract(format!(
            "rotated-digit construction needs the 10000-image test set, got {}",
            test.len()
        )));
    }
    let (train_ds, val_pool) = build_domains(train, &ANGLES, &DOMAIN_COUNTS, TRAIN_POOL, seed)?;
    Ok(RotatedMnist {
        train: train_ds,
        val_pool,
        test_pool: test,
    })
}

/// Splits `pool` into a training pool of `train_pool` images and a held-out
/// remainder, then assembles one rotated domain per `(angle, count)` pair
/// by drawing with replacement from the training pool.
///
/// Parameterized so the construction logic can be exercised on small
/// fixtures; [`build_rotated_mnist`] pins the published protocol numbers.
pub fn build_domains(
    pool: &ImagePool,
    angles: &[f32],
    counts: &[usize],
    train_pool: usize,
    seed: u64,
) -> Result<(DomainDataset, ImagePool)> {
    if angles.len() != counts.len() {
        return Err(Error::Contract(format!(
            "{} angles but {} domain counts",
            angles.len(),
            counts.len()
        )));
    }
    if pool.len() <= train_pool {
        return Err(Error::Contract(format!(
            "need more than {train_pool} source images for a held-out split, got {}",
            pool.len()
        )));
    }

    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut rng::stream(seed, "rotmnist.split"));
    let (train_idx, val_idx) = order.split_at(train_pool);

    let mut domains = Vec::with_capacity(angles.len());
    for (&angle, &count) in angles.iter().zip(counts) {
        let label = format!("rotmnist.domain.{}", angle as i32);
        let mut r = rng::stream(seed, &label);
        let chosen: Vec<usize> = (0..count)
            .map(|_| train_idx[r.gen_range(0..train_pool)])
            .collect();
        let x = rotate_batch(&gather_rows(&pool.images, &chosen)?, angle)?;
        let y = chosen.iter().map(|&i| pool.labels[i]).collect();
        domains.push(Domain {
            name: domain_name(angle),
            x,
            y,
        });
    }

    let val_pool = ImagePool {
        images: gather_rows(&pool.images, val_idx)?,
        labels: val_idx.iter().map(|&i| pool.labels[i]).collect(),
    };
    Ok((
        DomainDataset {
            domains,
            num_classes: 10,
        },
        val_pool,
    ))
}

/// Gathers the chosen pool rows and rotates them by one domain's angle —
/// the on-demand path used by validation and test evaluation.
pub fn rotate_pool_sample(
    pool: &ImagePool,
    idx: &[usize],
    degrees: f32,
) -> Result<(Tensor<f32>, Vec<u32>)> {
    let x = rotate_batch(&gather_rows(&pool.images, idx)?, degrees)?;
    let y = idx.iter().map(|&i| pool.labels[i]).collect();
    Ok((x, y))
}
