//! Deterministic random-stream derivation.
//!
//! A run is controlled by one global `u64` seed. Every consumer (weight
//! init, data build, episode sampling, evaluation subsampling, ...) derives
//! its own independent ChaCha8 stream from that seed and a textual label:
//!
//! ```text
//! stream_seed = splitmix64(global_seed ^ fnv1a64(label))
//! ```
//!
//! ChaCha8 is used (rather than the OS RNG or a small LCG) because its output
//! is identical across platforms and word sizes, which makes runs bitwise
//! reproducible anywhere.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a hash of a label, used to separate named streams.
fn fnv1a64(label: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in label.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// SplitMix64 finalizer; decorrelates nearby seeds.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives the deterministic RNG for `label` under `global_seed`.
pub fn stream(global_seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(global_seed ^ fnv1a64(label)))
}

/// Derives a labelled stream with a numeric qualifier (e.g. per-epoch or
/// per-seed streams such as `"episode"` + epoch index).
pub fn stream_n(global_seed: u64, label: &str, n: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(
        splitmix64(global_seed ^ fnv1a64(label)) ^ n.wrapping_mul(0x9e3779b97f4a7c15),
    ))
}
