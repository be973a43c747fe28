//! Worst-case and average accuracy over domains, the rotating
//! evaluation protocols, checkpoint selection, and seed summaries.
//!
//! Every protocol here scores a fixed number of points per domain, so
//! the average is an unweighted mean and the binomial error bar is the
//! same for every domain.  Adaptive methods see each evaluation batch
//! of `k` points exactly as they would at deployment: the batch is both
//! the adaptation input and the scored input.  Non-adaptive methods run
//! the same loop, which makes their results invariant to how the points
//! are grouped.

use rand::Rng;

use crate::arm::{predict_adapted, AdaptSettings, ModelBundle};
use crate::data::rotmnist::{domain_name, rotate_pool_sample};
use crate::data::{gather_rows, DomainDataset, ImagePool};
use crate::error::{Error, Result};
use crate::streamer::StreamState;
use crate::tensor::Tensor;

/// Forward batch size used when scoring a frozen streaming payload over
/// a full evaluation set.  Pure performance knob: payload predictions
/// are per-example, so the grouping cannot change any output.
const SCORE_CHUNK: usize = 256;

// ── Per-domain scores and the aggregate report ──────────────────────────

/// Top-1 accuracy of one domain's evaluation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainScore {
    pub domain: String,
    pub correct: usize,
    pub total: usize,
}

impl DomainScore {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// Accuracy over all evaluated domains, with the two aggregates the
/// framework reports: the worst case (minimum over domains) and the
/// unweighted average.  Aggregates are computed by the constructor and
/// always recompute exactly from `per_domain`.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub per_domain: Vec<DomainScore>,
    pub worst_case: f64,
    pub average: f64,
    /// Points scored in each domain (identical across domains).
    pub n_per_domain: usize,
    /// Seed of the run that produced the evaluated model.
    pub seed: u64,
    /// Digest of the resolved run configuration; empty when the report
    /// is produced outside a configured run.
    pub digest: String,
}

impl MetricsReport {
    /// Builds a report from per-domain scores.  Every domain must have
    /// scored the same number of points, at least one.
    pub fn new(per_domain: Vec<DomainScore>, seed: u64) -> Result<MetricsReport> {
        if per_domain.is_empty() {
            return Err(Error::Contract("metrics over zero domains".into()));
        }
        let n = per_domain[0].total;
        if n == 0 {
            return Err(Error::Contract("metrics over zero points".into()));
        }
        if let Some(odd) = per_domain.iter().find(|s| s.total != n) {
            return Err(Error::Contract(format!(
                "unequal domain sizes: `{}` scored {} points, expected {n}",
                odd.domain, odd.total
            )));
        }
        let accs: Vec<f64> = per_domain.iter().map(DomainScore::accuracy).collect();
        let worst_case = accs.iter().copied().fold(f64::INFINITY, f64::min);
        let average = accs.iter().sum::<f64>() / accs.len() as f64;
        Ok(MetricsReport {
            per_domain,
            worst_case,
            average,
            n_per_domain: n,
            seed,
            digest: String::new(),
        })
    }

    pub fn with_digest(mut self, digest: impl Into<String>) -> MetricsReport {
        self.digest = digest.into();
        self
    }

    /// True when the aggregates recompute exactly from the per-domain
    /// scores and sit in the required order `worst ≤ average ≤ 1`.
    pub fn consistent(&self) -> bool {
        match MetricsReport::new(self.per_domain.clone(), self.seed) {
            Ok(fresh) => {
                self.worst_case == fresh.worst_case
                    && self.average == fresh.average
                    && self.n_per_domain == fresh.n_per_domain
                    && self.worst_case <= self.average
                    && self.average <= 1.0
            }
            Err(_) => false,
        }
    }
}

// ── Scoring one domain ──────────────────────────────────────────────────

/// Scores one domain's points in adaptation batches of `k`: each batch
/// is adapted on (methods that adapt) and predicted, and the last batch
/// may be smaller when `k` does not divide the count.  `k` larger than
/// the number of points is a contract violation — the protocol would
/// silently change the adaptation batch size.
pub fn score_domain(
    bundle: &ModelBundle,
    settings: AdaptSettings,
    name: &str,
    x: &Tensor<f32>,
    y: &[u32],
    k: usize,
) -> Result<DomainScore> {
    let n = y.len();
    if x.rank() < 2 || x.shape()[0] != n || n == 0 {
        return Err(Error::shape(
            "score_domain",
            format!("{:?} examples vs {n} labels", x.shape()),
        ));
    }
    if k == 0 || k > n {
        return Err(Error::Contract(format!(
            "adaptation batch k={k} outside 1..={n} for domain `{name}`"
        )));
    }
    let mut correct = 0usize;
    let mut start = 0usize;
    while start < n {
        let end = (start + k).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let batch = gather_rows(x, &idx)?;
        let pred = predict_adapted(bundle, settings, &batch)?;
        correct += pred
            .argmax
            .iter()
            .zip(&y[start..end])
            .filter(|(a, b)| a == b)
            .count();
        start = end;
    }
    Ok(DomainScore {
        domain: name.to_string(),
        correct,
        total: n,
    })
}

// ── Evaluation protocols ────────────────────────────────────────────────

/// Evaluates a model on every domain of a dataset, adapting in batches
/// of `k`.  With `n_per_domain = Some(n)`, each domain contributes `n`
/// points sampled without replacement; with `None`, every point is
/// scored and the rng is never consumed (domains must then already be
/// the same size).
pub fn evaluate_dataset<R: Rng>(
    bundle: &ModelBundle,
    settings: AdaptSettings,
    ds: &DomainDataset,
    k: usize,
    n_per_domain: Option<usize>,
    seed: u64,
    rng: &mut R,
) -> Result<MetricsReport> {
    let mut scores = Vec::with_capacity(ds.domains.len());
    for d in &ds.domains {
        let score = match n_per_domain {
            None => score_domain(bundle, settings, &d.name, &d.x, &d.y, k)?,
            Some(n) => {
                if n > d.len() {
                    return Err(Error::Contract(format!(
                        "domain `{}` holds {} points, cannot sample {n}",
                        d.name,
                        d.len()
                    )));
                }
                let idx = rand::seq::index::sample(rng, d.len(), n).into_vec();
                let x = gather_rows(&d.x, &idx)?;
                let y: Vec<u32> = idx.iter().map(|&i| d.y[i]).collect();
                score_domain(bundle, settings, &d.name, &x, &y, k)?
            }
        };
        scores.push(score);
    }
    MetricsReport::new(scores, seed)
}

/// The rotating protocol shared by validation and test: for each angle,
/// `n_per_domain` source images are sampled from the pool without
/// replacement, rotated, and scored in adaptation batches of `k`.
/// Validation resamples fresh points on every call (the rng advances);
/// the reference test pass uses 3000 of the 10000 test originals per
/// rotation.
pub fn evaluate_rotated_pool<R: Rng>(
    bundle: &ModelBundle,
    settings: AdaptSettings,
    pool: &ImagePool,
    angles: &[f32],
    k: usize,
    n_per_domain: usize,
    seed: u64,
    rng: &mut R,
) -> Result<MetricsReport> {
    if angles.is_empty() {
        return Err(Error::Contract("no rotation angles to evaluate".into()));
    }
    if n_per_domain > pool.len() {
        return Err(Error::Contract(format!(
            "pool holds {} images, cannot sample {n_per_domain}",
            pool.len()
        )));
    }
    let mut scores = Vec::with_capacity(angles.len());
    for &deg in angles {
        let idx = rand::seq::index::sample(rng, pool.len(), n_per_domain).into_vec();
        let (x, y) = rotate_pool_sample(pool, &idx, deg)?;
        scores.push(score_domain(
            bundle,
            settings,
            &domain_name(deg),
            &x,
            &y,
            k,
        )?);
    }
    MetricsReport::new(scores, seed)
}

/// Builds the validation callback used during training: each call
/// scores `n_per_domain` freshly resampled points per angle (the rng
/// advances across calls, so successive epochs see different draws) and
/// returns `(worst_case, average)`.
pub fn make_validator<'p, R: Rng + 'p>(
    pool: &'p ImagePool,
    angles: &'p [f32],
    settings: AdaptSettings,
    k: usize,
    n_per_domain: usize,
    seed: u64,
    mut rng: R,
) -> impl FnMut(&ModelBundle) -> Result<(f64, f64)> + 'p {
    move |bundle| {
        let report = evaluate_rotated_pool(
            bundle,
            settings,
            pool,
            angles,
            k,
            n_per_domain,
            seed,
            &mut rng,
        )?;
        Ok((report.worst_case, report.average))
    }
}

// ── Checkpoint selection ────────────────────────────────────────────────

/// Picks the checkpoint with the best worst-case validation accuracy;
/// ties go to the earliest.  The rule is invariant under any strictly
/// increasing transform of the scores, so rescaling accuracies can
/// never change which checkpoint ships.
pub fn select_checkpoint(worst_case: &[f64]) -> Result<usize> {
    if worst_case.is_empty() {
        return Err(Error::Contract("no checkpoints to select from".into()));
    }
    if let Some(bad) = worst_case.iter().find(|v| !v.is_finite()) {
        return Err(Error::Contract(format!(
            "non-finite validation score {bad}"
        )));
    }
    let mut best = 0usize;
    for (i, &v) in worst_case.iter().enumerate().skip(1) {
        if v > worst_case[best] {
            best = i;
        }
    }
    Ok(best)
}

// ── Seed summaries ──────────────────────────────────────────────────────

/// Mean and standard error over independent training seeds, for the
/// worst-case and average accuracy of the selected checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSummary {
    pub seeds: usize,
    pub worst_case_mean: f64,
    pub worst_case_sem: f64,
    pub average_mean: f64,
    pub average_sem: f64,
}

fn mean_sem(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt() / n.sqrt())
}

/// Summarizes per-seed `(worst_case, average)` results as
/// `mean ± std/√seeds`, with the sample standard deviation.
pub fn summarize_seeds(results: &[(f64, f64)]) -> Result<SeedSummary> {
    if results.is_empty() {
        return Err(Error::Contract("no seed results to summarize".into()));
    }
    let wc: Vec<f64> = results.iter().map(|r| r.0).collect();
    let avg: Vec<f64> = results.iter().map(|r| r.1).collect();
    let (worst_case_mean, worst_case_sem) = mean_sem(&wc);
    let (average_mean, average_sem) = mean_sem(&avg);
    Ok(SeedSummary {
        seeds: results.len(),
        worst_case_mean,
        worst_case_sem,
        average_mean,
        average_sem,
    })
}

// ── Streaming accuracy curves ───────────────────────────────────────────

/// Accuracy of the frozen payload after `t` observed points.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub t: usize,
    pub accuracy: f64,
}

/// Streams one domain's points in row order, one at a time, and at each
/// requested `t` freezes the payload and scores it on the domain's full
/// evaluation set.  The curve therefore measures what the adapted model
/// would answer everywhere after `t` observations, on the same points
/// that define its batch accuracy.  `record_at` must be strictly
/// increasing, within `1..=n`.
pub fn streaming_curve(
    bundle: &ModelBundle,
    x: &Tensor<f32>,
    y: &[u32],
    record_at: &[usize],
) -> Result<Vec<CurvePoint>> {
    let n = y.len();
    if x.rank() < 2 || x.shape()[0] != n {
        return Err(Error::shape(
            "streaming_curve",
            format!("{:?} examples vs {n} labels", x.shape()),
        ));
    }
    for w in record_at.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Contract(
                "curve checkpoints must strictly increase".into(),
            ));
        }
    }
    match (record_at.first(), record_at.last()) {
        (Some(&first), Some(&last)) if first >= 1 && last <= n => {}
        (None, _) => return Err(Error::Contract("no curve checkpoints".into())),
        _ => {
            return Err(Error::Contract(format!(
                "curve checkpoints must lie in 1..={n}"
            )))
        }
    }
    let mut state = StreamState::new(bundle)?;
    let mut curve = Vec::with_capacity(record_at.len());
    let mut seen = 0usize;
    for &t in record_at {
        while seen < t {
            let point = gather_rows(x, &[seen])?;
            state.observe(bundle, &point)?;
            seen += 1;
        }
        let mut correct = 0usize;
        let mut start = 0usize;
        while start < n {
            let end = (start + SCORE_CHUNK).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let pred = state.predict(bundle, &gather_rows(x, &idx)?)?;
            correct += pred
                .argmax
                .iter()
                .zip(&y[start..end])
                .filter(|(a, b)| a == b)
                .count();
            start = end;
        }
        curve.push(CurvePoint {
            t,
            accuracy: correct as f64 / n as f64,
        });
    }
    Ok(curve)
}

// ── Tests ───────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm::Method;
    use crate::data::Domain;
    use crate::nn::Partition;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn score(domain: &str, correct: usize, total: usize) -> DomainScore {
        DomainScore {
            domain: domain.into(),
            correct,
            total,
        }
    }

    #[test]
    fn aggregates_recompute_from_per_domain_scores() {
        let r = MetricsReport::new(
            vec![score("a", 9, 10), score("b", 7, 10), score("c", 8, 10)],
            1,
        )
        .unwrap();
        assert_eq!(r.worst_case, 0.7);
        assert!((r.average - 0.8).abs() < 1e-12);
        assert_eq!(r.n_per_domain, 10);
        assert!(r.consistent());
    }

    #[test]
    fn degenerate_reports_are_rejected() {
        assert!(MetricsReport::new(vec![], 0).is_err());
        assert!(MetricsReport::new(vec![score("a", 0, 0)], 0).is_err());
        let unequal = vec![score("a", 1, 10), score("b", 1, 12)];
        assert!(MetricsReport::new(unequal, 0).is_err());
    }

    proptest! {
        /// For any correct counts, the aggregates order as
        /// `worst ≤ average ≤ 1` and the report self-checks.
        #[test]
        fn reports_are_always_consistent(counts in proptest::collection::vec(0usize..=20, 1..8)) {
            let scores: Vec<DomainScore> = counts
                .iter()
                .enumerate()
                .map(|(i, &c)| score(&format!("d{i}"), c, 20))
                .collect();
            let r = MetricsReport::new(scores, 3).unwrap();
            prop_assert!(r.worst_case <= r.average);
            prop_assert!(r.average <= 1.0);
            prop_assert!(r.consistent());
        }
    }

    /// Two-class dataset whose label is the sign of the single feature,
    /// plus a handcrafted linear model that reads the sign directly —
    /// a perfect classifier for it.
    fn sign_dataset(n: usize, domains: usize, seed: u64) -> DomainDataset {
        let mut r = rng::stream(seed, "eval-test");
        let domains = (0..domains)
            .map(|d| {
                let xs: Vec<f32> = (0..n)
                    .map(|_| {
                        let v: f32 = r.gen_range(0.05..1.0);
                        if r.gen_bool(0.5) {
                            v
                        } else {
                            -v
                        }
                    })
                    .collect();
                let y = xs.iter().map(|&v| (v > 0.0) as u32).collect();
                Domain {
                    name: format!("d{d}"),
                    x: Tensor::from_vec(&[n, 1], xs).unwrap(),
                    y,
                }
            })
            .collect();
        DomainDataset {
            domains,
            num_classes: 2,
        }
    }

    fn sign_reader() -> ModelBundle {
        let mut bundle = ModelBundle::for_synthetic(Method::Erm, 4, 0, 0).unwrap();
        let pred = crate::nn::Network::new(
            &[1],
            vec![crate::nn::Layer::Dense {
                name: "pred.out".into(),
                out_dim: 2,
            }],
        );
        let mut params = crate::nn::ParamSet::new();
        params
            .insert(
                "pred.out.w",
                Partition::Prediction,
                Tensor::from_vec(&[1, 2], vec![-1.0, 1.0]).unwrap(),
            )
            .unwrap();
        params
            .insert(
                "pred.out.b",
                Partition::Prediction,
                Tensor::zeros(&[2]),
            )
            .unwrap();
        bundle.pred = pred;
        bundle.params = params;
        bundle
    }

    #[test]
    fn a_perfect_classifier_scores_one_everywhere() {
        let ds = sign_dataset(40, 3, 5);
        let bundle = sign_reader();
        let mut r = rng::stream(5, "eval-test");
        let report = evaluate_dataset(
            &bundle,
            AdaptSettings::default(),
            &ds,
            7,
            None,
            5,
            &mut r,
        )
        .unwrap();
        for s in &report.per_domain {
            assert_eq!(s.correct, s.total, "{} missed points", s.domain);
        }
        assert_eq!(report.worst_case, 1.0);
        assert_eq!(report.average, 1.0);
    }

    /// Any fixed predictor facing uniformly random labels over 10
    /// classes lands near 10% accuracy; with 300 points per domain the
    /// binomial 3σ band is ±5.2 points.
    #[test]
    fn random_labels_score_near_chance() {
        let classes = 10u32;
        let n = 300;
        let mut r = rng::stream(9, "eval-test");
        let domains = (0..3)
            .map(|d| {
                let xs: Vec<f32> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
                let y = (0..n).map(|_| r.gen_range(0..classes)).collect();
                Domain {
                    name: format!("d{d}"),
                    x: Tensor::from_vec(&[n, 1], xs).unwrap(),
                    y,
                }
            })
            .collect();
        let ds = DomainDataset {
            domains,
            num_classes: classes as usize,
        };
        let pred = crate::nn::Network::new(
            &[1],
            vec![
                crate::nn::Layer::Dense {
                    name: "pred.fc1".into(),
                    out_dim: 8,
                },
                crate::nn::Layer::Relu,
                crate::nn::Layer::Dense {
                    name: "pred.fc2".into(),
                    out_dim: classes as usize,
                },
            ],
        );
        let bundle = ModelBundle::assemble(Method::Erm, pred, None, None, 2).unwrap();
        let report = evaluate_dataset(
            &bundle,
            AdaptSettings::default(),
            &ds,
            50,
            None,
            9,
            &mut rng::stream(9, "eval-test"),
        )
        .unwrap();
        let sigma3 = 3.0 * (0.1 * 0.9 / n as f64).sqrt();
        for s in &report.per_domain {
            assert!(
                (s.accuracy() - 0.1).abs() <= sigma3,
                "{} scored {:.3}, outside 0.1 ± {sigma3:.3}",
                s.domain,
                s.accuracy()
            );
        }
    }

    #[test]
    fn non_adaptive_results_ignore_batch_grouping() {
        let ds = sign_dataset(40, 3, 11);
        let bundle = ModelBundle::for_synthetic(Method::Erm, 8, 0, 3).unwrap();
        let mut reports = Vec::new();
        for k in [1usize, 7, 40] {
            let mut r = rng::stream(0, "eval-test");
            let rep = evaluate_dataset(
                &bundle,
                AdaptSettings::default(),
                &ds,
                k,
                None,
                0,
                &mut r,
            )
            .unwrap();
            reports.push(rep);
        }
        for rep in &reports[1..] {
            assert_eq!(rep.per_domain, reports[0].per_domain);
        }
    }

    #[test]
    fn oversized_adaptation_batches_are_rejected() {
        let ds = sign_dataset(10, 1, 2);
        let bundle = ModelBundle::for_synthetic(Method::Erm, 4, 0, 0).unwrap();
        let err = evaluate_dataset(
            &bundle,
            AdaptSettings::default(),
            &ds,
            50,
            None,
            0,
            &mut rng::stream(0, "eval-test"),
        );
        assert!(err.is_err());
    }

    /// A pool of random "images" exercises the rotating protocol
    /// end-to-end without real digits.
    fn noise_pool(n: usize, seed: u64) -> ImagePool {
        let mut r = rng::stream(seed, "eval-test");
        let images: Vec<f32> = (0..n * 28 * 28).map(|_| r.gen_range(0.0..1.0)).collect();
        let labels = (0..n).map(|_| r.gen_range(0..10u32)).collect();
        ImagePool {
            images: Tensor::from_vec(&[n, 1, 28, 28], images).unwrap(),
            labels,
        }
    }

    #[test]
    fn rotating_evaluation_is_deterministic_given_the_seed() {
        let pool = noise_pool(60, 21);
        let bundle = ModelBundle::for_images_at_width(Method::Erm, 4, 1).unwrap();
        let run = || {
            let mut r = rng::stream(7, "eval-test");
            evaluate_rotated_pool(
                &bundle,
                AdaptSettings::default(),
                &pool,
                &[0.0, 30.0, 60.0],
                6,
                18,
                7,
                &mut r,
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.per_domain, b.per_domain);
        assert_eq!(a.worst_case, b.worst_case);
        assert_eq!(a.average, b.average);
    }

    #[test]
    fn validation_passes_resample_fresh_points() {
        let pool = noise_pool(60, 22);
        let bundle = ModelBundle::for_images_at_width(Method::Erm, 4, 1).unwrap();
        let mut validate = make_validator(
            &pool,
            &[0.0, 40.0, 80.0],
            AdaptSettings::default(),
            6,
            18,
            13,
            rng::stream(13, "eval-test"),
        );
        let first = validate(&bundle).unwrap();
        let second = validate(&bundle).unwrap();
        // Fresh draws of 18-of-60 noise images almost surely shift the
        // chance-level scores; equal pairs would mean the rng stalled.
        assert_ne!(first, second);
    }

    #[test]
    fn checkpoint_selection_prefers_worst_case_then_earliest() {
        assert_eq!(select_checkpoint(&[0.6, 0.8, 0.7]).unwrap(), 1);
        assert_eq!(select_checkpoint(&[0.5, 0.5, 0.5]).unwrap(), 0);
        assert_eq!(select_checkpoint(&[0.2]).unwrap(), 0);
        assert!(select_checkpoint(&[]).is_err());
        assert!(select_checkpoint(&[0.3, f64::NAN]).is_err());
    }

    proptest! {
        /// Strictly increasing transforms never change the selection.
        #[test]
        fn selection_is_invariant_to_monotone_rescaling(
            scores in proptest::collection::vec(0.0f64..1.0, 1..10),
        ) {
            let base = select_checkpoint(&scores).unwrap();
            let scaled: Vec<f64> = scores.iter().map(|v| 0.5 * v + 0.1).collect();
            let cubed: Vec<f64> = scores.iter().map(|v| v.powi(3)).collect();
            prop_assert_eq!(select_checkpoint(&scaled).unwrap(), base);
            prop_assert_eq!(select_checkpoint(&cubed).unwrap(), base);
        }
    }

    #[test]
    fn seed_summary_matches_hand_computation() {
        let s = summarize_seeds(&[(0.7, 0.8), (0.8, 0.85), (0.9, 0.9)]).unwrap();
        assert_eq!(s.seeds, 3);
        assert!((s.worst_case_mean - 0.8).abs() < 1e-15);
        // Sample std of {0.7, 0.8, 0.9} is 0.1; over √3 seeds:
        assert!((s.worst_case_sem - 0.1 / 3f64.sqrt()).abs() < 1e-15);
        assert!((s.average_mean - 0.85).abs() < 1e-15);
        assert!((s.average_sem - 0.05 / 3f64.sqrt()).abs() < 1e-15);
        let single = summarize_seeds(&[(0.5, 0.6)]).unwrap();
        assert_eq!(single.worst_case_sem, 0.0);
    }

    #[test]
    fn streaming_curve_ends_at_the_batch_answer() {
        let ds = sign_dataset(24, 1, 31);
        let bundle = ModelBundle::for_synthetic(Method::ArmCml, 8, 4, 5).unwrap();
        let d = &ds.domains[0];
        let curve = streaming_curve(&bundle, &d.x, &d.y, &[1, 8, 24]).unwrap();
        assert_eq!(curve.len(), 3);
        assert_eq!(curve[0].t, 1);
        assert_eq!(curve[2].t, 24);
        // After streaming all 24 points the payload equals the batch
        // context, so the frozen-payload score is the batch score.
        let batch = score_domain(
            &bundle,
            AdaptSettings::default(),
            &d.name,
            &d.x,
            &d.y,
            24,
        )
        .unwrap();
        assert_eq!(curve[2].accuracy, batch.accuracy());
        for p in &curve {
            assert!((0.0..=1.0).contains(&p.accuracy));
        }
    }

    #[test]
    fn curve_checkpoints_must_strictly_increase() {
        let ds = sign_dataset(10, 1, 3);
        let bundle = ModelBundle::for_synthetic(Method::ArmCml, 4, 2, 0).unwrap();
        let d = &ds.domains[0];
        assert!(streaming_curve(&bundle, &d.x, &d.y, &[5, 3]).is_err());
        assert!(streaming_curve(&bundle, &d.x, &d.y, &[0, 4]).is_err());
        assert!(streaming_curve(&bundle, &d.x, &d.y, &[4, 11]).is_err());
        assert!(streaming_curve(&bundle, &d.x, &d.y, &[]).is_err());
    }
}
