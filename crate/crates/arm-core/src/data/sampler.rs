//! Training-time sampling: single-domain episodes for adaptive training
//! and flat batches for the non-adaptive baselines.

use rand::Rng;

use crate::data::{gather_rows, DomainDataset, Episode, Group, MixedBatch};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How a flat batch spreads over domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    /// Every example position equally likely: large domains dominate.
    OverExamples,
    /// Domain first (uniform), then an example within it: domains
    /// contribute equally regardless of size.
    OverDomains,
}

/// Draws `meta_bs` single-domain groups of `k` examples each. Domains are
/// chosen uniformly with replacement; examples within a domain likewise.
pub fn sample_episode(
    ds: &DomainDataset,
    meta_bs: usize,
    k: usize,
    rng: &mut impl Rng,
) -> Result<Episode> {
    if meta_bs == 0 || k == 0 {
        return Err(Error::Contract("episode needs meta_bs >= 1 and k >= 1".to_string()));
    }
    let s = ds.num_domains();
    if s == 0 {
        return Err(Error::Contract("episode sampling from an empty dataset".to_string()));
    }
    let mut groups = Vec::with_capacity(meta_bs);
    for _ in 0..meta_bs {
        let d = rng.gen_range(0..s);
        let domain = &ds.domains[d];
        if domain.is_empty() {
            return Err(Error::Contract(format!("domain {d} (`{}`) is empty", domain.name)));
        }
        let idx: Vec<usize> = (0..k).map(|_| rng.gen_range(0..domain.len())).collect();
        groups.push(Group {
            domain: d,
            x: gather_rows(&domain.x, &idx)?,
            y: idx.iter().map(|&i| domain.y[i]).collect(),
        });
    }
    Ok(Episode { groups })
}

/// Draws a flat `n`-example batch. With replacement, `mode` picks the
/// distribution; without replacement (supported for [`BatchMode::OverExamples`]
/// only), `n` equal to the dataset size yields a permutation of it.
pub fn sample_batch(
    ds: &DomainDataset,
    n: usize,
    mode: BatchMode,
    replacement: bool,
    rng: &mut impl Rng,
) -> Result<MixedBatch> {
    if n == 0 {
        return Err(Error::Contract("batch needs n >= 1".to_string()));
    }
    let total = ds.total_len();
    if total == 0 {
        return Err(Error::Contract("batch sampling from an empty dataset".to_string()));
    }
    // (domain, local index) per drawn example.
    let picks: Vec<(usize, usize)> = if replacement {
        match mode {
            BatchMode::OverExamples => {
                let bounds = domain_bounds(ds);
                (0..n)
                    .map(|_| global_to_local(&bounds, rng.gen_range(0..total)))
                    .collect()
            }
            BatchMode::OverDomains => (0..n)
                .map(|_| {
                    let d = rng.gen_range(0..ds.num_domains());
                    let domain = &ds.domains[d];
                    if domain.is_empty() {
                        return Err(Error::Contract(format!(
                            "domain {d} (`{}`) is empty",
                            domain.name
                        )));
                    }
                    Ok((d, rng.gen_range(0..domain.len())))
                })
                .collect::<Result<_>>()?,
        }
    } else {
        if mode != BatchMode::OverExamples {
            return Err(Error::Contract(
                "without-replacement sampling is defined over examples, not domains".to_string(),
            ));
        }
        if n > total {
            return Err(Error::Contract(format!(
                "cannot draw {n} distinct examples from {total}"
            )));
        }
        let bounds = domain_bounds(ds);
        rand::seq::index::sample(rng, total, n)
            .into_iter()
            .map(|g| global_to_local(&bounds, g))
            .collect()
    };

    // Copy rows domain by domain, preserving draw order.
    let row: usize = {
        let d0 = &ds.domains[0];
        d0.x.numel() / d0.len().max(1)
    };
    let mut x = Vec::with_capacity(n * row);
    let mut y = Vec::with_capacity(n);
    let mut domains = Vec::with_capacity(n);
    for &(d, i) in &picks {
        let dom = &ds.domains[d];
        x.extend_from_slice(&dom.x.data()[i * row..(i + 1) * row]);
        y.push(dom.y[i]);
        domains.push(d);
    }
    let mut shape = ds.domains[0].x.shape().to_vec();
    shape[0] = n;
    Ok(MixedBatch {
        x: Tensor::from_vec(&shape, x)?,
        y,
        domains,
    })
}

/// Cumulative start offset of each domain in the flattened dataset.
fn domain_bounds(ds: &DomainDataset) -> Vec<usize> {
    let mut bounds = Vec::with_capacity(ds.num_domains() + 1);
    let mut acc = 0;
    bounds.push(0);
    for d in &ds.domains {
        acc += d.len();
        bounds.push(acc);
    }
    bounds
}

fn global_to_local(bounds: &[usize], g: usize) -> (usize, usize) {
    // partition_point gives the first domain whose start exceeds g.
    let d = bounds.partition_point(|&b| b <= g) - 1;
    (d, g - bounds[d])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Domain;
    use crate::rng;
    use proptest::prelude::*;

    /// 14 domains with sizes 5, 10, …, 70; each example's single feature
    /// encodes its domain, so mixing is detectable from the data alone.
    fn fixture() -> DomainDataset {
        let domains = (0..14)
            .map(|d| {
                let m = (d + 1) * 5;
                Domain {
                    name: format!("d{d}"),
                    x: Tensor::from_vec(&[m, 1], vec![d as f32; m]).unwrap(),
                    y: vec![0; m],
                }
            })
            .collect();
        DomainDataset {
            domains,
            num_classes: 10,
        }
    }

    #[test]
    fn episode_shape_and_purity() {
        let ds = fixture();
        let mut r = rng::stream(0, "sampler-test");
        let ep = sample_episode(&ds, 6, 50, &mut r).unwrap();
        assert_eq!(ep.groups.len(), 6);
        for g in &ep.groups {
            assert_eq!(g.x.shape(), &[50, 1]);
            assert_eq!(g.y.len(), 50);
            assert!(g.x.data().iter().all(|&v| v == g.domain as f32));
        }
    }

    #[test]
    fn k_of_one_gives_singleton_group() {
        let ds = fixture();
        let mut r = rng::stream(1, "sampler-test");
        let ep = sample_episode(&ds, 1, 1, &mut r).unwrap();
        assert_eq!(ep.groups.len(), 1);
        assert_eq!(ep.groups[0].x.shape(), &[1, 1]);
    }

    /// Over many episodes every domain's draw frequency concentrates near
    /// 1/14 (multinomial 3σ band; the generator is seeded, so this is
    /// deterministic).
    #[test]
    fn episode_domains_are_uniform()  {
        let ds = fixture();
        let mut r = rng::stream(2, "sampler-test");
        let mut counts = [0usize; 14];
        let episodes = 10_000 / 2;
        for _ in 0..episodes {
            for g in sample_episode(&ds, 2, 1, &mut r).unwrap().groups {
                counts[g.domain] += 1;
            }
        }
        let n = (episodes * 2) as f64;
        let p = 1.0 / 14.0;
        let sigma = (n * p * (1.0 - p)).sqrt();
        for (d, &c) in counts.iter().enumerate() {
            let dev = (c as f64 - n * p).abs();
            assert!(dev <= 3.0 * sigma, "domain {d}: count {c}, dev {dev:.1} > 3σ = {:.1}", 3.0 * sigma);
        }
    }

    /// χ² goodness-of-fit over 10000 draws: example-uniform sampling tracks
    /// domain sizes, domain-uniform sampling tracks the flat distribution.
    /// Critical value: χ²₁₃ at the 0.999 quantile.
    #[test]
    fn batch_modes_have_the_right_domain_marginals() {
        let ds = fixture();
        let crit = 34.528;
        let total = ds.total_len() as f64;
        let cases: [(BatchMode, Box<dyn Fn(usize) -> f64>); 2] = [
            (
                BatchMode::OverExamples,
                Box::new(move |d| 10_000.0 * ((d + 1) * 5) as f64 / total),
            ),
            (BatchMode::OverDomains, Box::new(|_| 10_000.0 / 14.0)),
        ];
        for (mode, expected) in cases {
            let mut r = rng::stream(3, "sampler-test");
            let batch = sample_batch(&ds, 10_000, mode, true, &mut r).unwrap();
            let mut counts = [0f64; 14];
            for &d in &batch.domains {
                counts[d] += 1.0;
            }
            let chi2: f64 = counts
                .iter()
                .enumerate()
                .map(|(d, &o)| {
                    let e = expected(d);
                    (o - e).powi(2) / e
                })
                .sum();
            assert!(chi2 < crit, "{mode:?}: χ² = {chi2:.2} >= {crit}");
        }
    }

    #[test]
    fn exhaustive_draw_without_replacement_is_a_permutation() {
        let ds = fixture();
        let total = ds.total_len();
        let mut r = rng::stream(4, "sampler-test");
        let batch = sample_batch(&ds, total, BatchMode::OverExamples, false, &mut r).unwrap();
        let mut per_domain = [0usize; 14];
        for &d in &batch.domains {
            per_domain[d] += 1;
        }
        for (d, dom) in ds.domains.iter().enumerate() {
            assert_eq!(per_domain[d], dom.len(), "domain {d} multiplicity");
        }
        // Not just counts: the drawn order must not be the identity walk.
        let identity: Vec<usize> = ds
            .domains
            .iter()
            .enumerate()
            .flat_map(|(d, dom)| std::iter::repeat(d).take(dom.len()))
            .collect();
        assert_ne!(batch.domains, identity);
    }

    #[test]
    fn degenerate_requests_are_rejected() {
        let ds = fixture();
        let mut r = rng::stream(5, "sampler-test");
        assert!(sample_episode(&ds, 0, 1, &mut r).is_err());
        assert!(sample_episode(&ds, 1, 0, &mut r).is_err());
        assert!(sample_batch(&ds, 0, BatchMode::OverExamples, true, &mut r).is_err());
        assert!(sample_batch(&ds, 10_000, BatchMode::OverExamples, false, &mut r).is_err());
        assert!(sample_batch(&ds, 5, BatchMode::OverDomains, false, &mut r).is_err());
        let empty = DomainDataset {
            domains: vec![Domain {
                name: "void".to_string(),
                x: Tensor::<f32>::zeros(&[0, 1]),
                y: vec![],
            }],
            num_classes: 2,
        };
        assert!(sample_episode(&empty, 1, 1, &mut r).is_err());
    }

    proptest! {
        /// Groups never mix domains, for any episode geometry and seed.
        #[test]
        fn groups_stay_single_domain(
            seed in 0u64..500,
            meta_bs in 1usize..8,
            k in 1usize..16,
        ) {
            let ds = fixture();
            let mut r = rng::stream(seed, "sampler-prop");
            let ep = sample_episode(&ds, meta_bs, k, &mut r).unwrap();
            for g in &ep.groups {
                prop_assert!(g.x.data().iter().all(|&v| v == g.domain as f32));
            }
        }
    }
}
