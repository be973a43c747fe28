//! A minimal testbed where adaptation provably helps: 1-D inputs whose
//! label rule depends on the domain's input marginal.
//!
//! Each domain draws a center μ uniformly from {−1, +1}; inputs follow
//! `N(μ, σ²)` and the label is `1[x > μ]`. The label rule is a
//! deterministic function of the marginal, so a model that infers μ from
//! unlabeled inputs can approach perfect accuracy, while the best fixed
//! classifier is capped by the mixture Bayes rate computed here by
//! quadrature.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Domain, DomainDataset};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Generates `num_domains` domains of `n_per_domain` points each.
/// Domain names record the center, e.g. `d03(mu=+1)`.
pub fn make_synthetic(
    num_domains: usize,
    n_per_domain: usize,
    sigma: f64,
    seed: u64,
) -> Result<DomainDataset> {
    if num_domains < 2 {
        return Err(Error::Contract(
            "the synthetic testbed needs at least 2 domains".to_string(),
        ));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Contract(format!("sigma: {e}")))?;
    let mut r = rng::stream(seed, "synthetic");
    let mut domains = Vec::with_capacity(num_domains);
    for d in 0..num_domains {
        let mu: f64 = if r.gen::<bool>() { 1.0 } else { -1.0 };
        let mut x = Vec::with_capacity(n_per_domain);
        let mut y = Vec::with_capacity(n_per_domain);
        for _ in 0..n_per_domain {
            let v = mu + normal.sample(&mut r);
            x.push(v as f32);
            y.push(u32::from(v > mu));
        }
        domains.push(Domain {
            name: format!("d{d:02}(mu={})", if mu > 0.0 { "+1" } else { "-1" }),
            x: Tensor::from_vec(&[n_per_domain, 1], x)?,
            y,
        });
    }
    Ok(DomainDataset {
        domains,
        num_classes: 2,
    })
}

/// Accuracy ceiling for any fixed (non-adaptive) classifier on the testbed:
/// `∫ max_y p(x, y) dx` under the uniform mixture of the two centers,
/// integrated by Simpson's rule on the pieces where the integrand is
/// smooth (the label indicators introduce breakpoints at ±1).
pub fn bayes_nonadaptive_accuracy(sigma: f64) -> f64 {
    let phi = move |x: f64, mu: f64| {
        let z = (x - mu) / sigma;
        (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
    };
    // max_y p(x, y), written per region so every integrand handed to
    // Simpson is smooth (indicators jump at ±1, the max kinks at 0):
    //   x < −1:      both centers label 0      → ½(φ₋ + φ₊)
    //   −1 < x < 0:  disagreement, φ₋ larger   → ½φ₋
    //   0 < x < 1:   disagreement, φ₊ larger   → ½φ₊
    //   x > 1:       both centers label 1      → ½(φ₋ + φ₊)
    let both = move |x: f64| 0.5 * (phi(x, -1.0) + phi(x, 1.0));
    let near_minus = move |x: f64| 0.5 * phi(x, -1.0);
    let near_plus = move |x: f64| 0.5 * phi(x, 1.0);
    let reach = 12.0 * sigma;
    simpson(&both, -1.0 - reach, -1.0, 4096)
        + simpson(&near_minus, -1.0, 0.0, 4096)
        + simpson(&near_plus, 0.0, 1.0, 4096)
        + simpson(&both, 1.0, 1.0 + reach, 4096)
}

/// Composite Simpson's rule with `n` (even) intervals.
fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    debug_assert!(n % 2 == 0);
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;

    /// At σ = 1 the ceiling has the closed form 1 − (Φ(2) − Φ(1)); the
    /// quadrature must reproduce it.
    #[test]
    fn quadrature_matches_closed_form_at_sigma_one() {
        let phi_1 = 0.8413447460685429;
        let phi_2 = 0.9772498680518208;
        let expected = 1.0 - (phi_2 - phi_1);
        let got = bayes_nonadaptive_accuracy(1.0);
        assert!(
            (got - expected).abs() < 1e-6,
            "quadrature {got}, closed form {expected}"
        );
        // The frozen reference value used by the acceptance suite.
        assert!((got - 0.864_094_878).abs() < 1e-6);
    }

    #[test]
    fn vanishing_noise_removes_the_ceiling() {
        assert!(bayes_nonadaptive_accuracy(0.1) > 0.999);
    }

    #[test]
    fn labels_follow_the_center_rule() {
        let ds = make_synthetic(8, 200, 1.0, 3).unwrap();
        for d in &ds.domains {
            let mu = if d.name.contains("mu=+1") { 1.0f32 } else { -1.0 };
            for (&x, &y) in d.x.data().iter().zip(&d.y) {
                assert_eq!(y, u32::from(x > mu), "x = {x}, mu = {mu}");
            }
        }
        // Both centers occur across 8 domains (probability of this failing
        // with a fixed seed: zero — it's deterministic).
        assert!(ds.domains.iter().any(|d| d.name.contains("mu=+1")));
        assert!(ds.domains.iter().any(|d| d.name.contains("mu=-1")));
    }

    #[test]
    fn tiny_sigma_makes_the_batch_mean_identify_the_center() {
        let ds = make_synthetic(4, 500, 1e-3, 7).unwrap();
        for d in &ds.domains {
            let mu = if d.name.contains("mu=+1") { 1.0f64 } else { -1.0 };
            let mean: f64 = d.x.data().iter().map(|&v| v as f64).sum::<f64>() / 500.0;
            assert!((mean - mu).abs() < 0.01, "mean {mean} vs mu {mu}");
        }
    }

    #[test]
    fn same_seed_reproduces_draws() {
        let a = make_synthetic(3, 50, 1.0, 11).unwrap();
        let b = make_synthetic(3, 50, 1.0, 11).unwrap();
        for (da, db) in a.domains.iter().zip(&b.domains) {
            assert_eq!(da.x.data(), db.x.data());
            assert_eq!(da.y, db.y);
            assert_eq!(da.name, db.name);
        }
    }
}
