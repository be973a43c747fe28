//! The acceptance gate: one test per shipping criterion, each printing a
//! single line with its measured values, pinned tolerances, and verdict
//! (run with `--nocapture` to see the lines for passing tests too).
//!
//! Criteria that need the digit data print a SKIP notice and pass
//! vacuously when the data directory is absent, so the suite still runs
//! on a fresh clone; `arm prepare-data` (or `scripts/desk_runs.sh`)
//! fills the directory. Criteria 4 and 5 consume multi-hour training
//! artifacts and are `#[ignore]`d in the default run:
//!
//! ```text
//! scripts/desk_runs.sh                 # ~a day on one CPU core
//! cargo test -p arm-core --test acceptance -- --ignored --nocapture
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;

use arm_core::arm::train::{train_arm, TrainConfig};
use arm_core::arm::{AdaptSettings, Method, ModelBundle};
use arm_core::data::rotmnist::{
    build_rotated_mnist, rotate_pool_sample, ANGLES, DOMAIN_COUNTS, TRAIN_POOL,
};
use arm_core::data::{idx, ImagePool};
use arm_core::eval::{score_domain, select_checkpoint, streaming_curve, summarize_seeds};
use arm_core::rng;
use arm_core::verify::{
    gradient_checks, meta_gradient_check, stream_batch_divergence, synthetic_oracle,
    META_GRADIENT_TOL, PRIMITIVE_TOL, SYNTHETIC_ARM_MARGIN, SYNTHETIC_ERM_BAND,
};

// ── Data and artifact locations ─────────────────────────────────────────

fn data_root() -> PathBuf {
    std::env::var_os("ARM_DATA_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn runs_root() -> PathBuf {
    std::env::var_os("ARM_RUNS_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../runs"))
}

fn have_data() -> bool {
    [
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    ]
    .iter()
    .all(|f| data_root().join(f).is_file())
}

fn skip_line(criterion: &str) {
    println!("{criterion}: SKIP (data not prepared; run `cargo run -p arm-cli --release -- prepare-data`)");
}

fn load_test_pool() -> ImagePool {
    idx::load_pool(
        &data_root().join("t10k-images-idx3-ubyte"),
        &data_root().join("t10k-labels-idx1-ubyte"),
    )
    .expect("test pool loads")
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

// ── Criterion 1: stream/batch equivalence ───────────────────────────────

#[test]
fn criterion_1_stream_batch_equivalence() {
    const PAYLOAD_TOL: f64 = 1e-4;
    const AGREEMENT_MIN: f64 = 0.99;
    const POINTS_PER_DOMAIN: usize = 3000;
    const K: usize = 50;

    if !have_data() {
        skip_line("criterion 1");
        return;
    }
    let pool = load_test_pool();
    let mut failures = Vec::new();
    for method in [Method::ArmCml, Method::ArmBn] {
        let bundle = ModelBundle::for_images_at_width(method, 8, 11).expect("bundle");
        let mut rng = rng::stream(11, "acceptance.stream");
        let mut worst_payload = 0.0f64;
        let mut min_agreement = 1.0f64;
        for &angle in &ANGLES {
            let idx = sample(&mut rng, pool.len(), POINTS_PER_DOMAIN).into_vec();
            let (x, _) = rotate_pool_sample(&pool, &idx, angle).expect("rotate");
            let d = stream_batch_divergence(&bundle, &x, K).expect("divergence");
            worst_payload = worst_payload.max(d.payload_max_diff);
            min_agreement = min_agreement.min(d.argmax_agreement);
        }
        let ok = worst_payload < PAYLOAD_TOL && min_agreement >= AGREEMENT_MIN;
        println!(
            "criterion 1 [{}]: payload max diff {worst_payload:.2e} (tol {PAYLOAD_TOL:.0e}), \
             argmax agreement {:.2}% (min {:.0}%) over {POINTS_PER_DOMAIN} points x {} domains, K={K} -> {}",
            method.name(),
            min_agreement * 100.0,
            AGREEMENT_MIN * 100.0,
            ANGLES.len(),
            verdict(ok)
        );
        if !ok {
            failures.push(format!(
                "{}: payload {worst_payload:.3e}, agreement {:.4}",
                method.name(),
                min_agreement
            ));
        }
    }
    assert!(
        failures.is_empty(),
        "stream/batch equivalence breached: {}",
        failures.join("; ")
    );
}

// ── Criterion 2: gradient verification ──────────────────────────────────

#[test]
fn criterion_2_gradient_verification() {
    let seeds = [0u64, 1, 2, 3, 4];
    let checks = gradient_checks(&seeds).expect("gradient suite");
    let worst = checks
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .expect("non-empty suite");
    let meta = meta_gradient_check(&seeds).expect("meta-gradient check");
    let ok = worst.max_rel_err < PRIMITIVE_TOL && meta < META_GRADIENT_TOL;
    println!(
        "criterion 2: {} primitives x {} seeds, worst `{}` rel err {:.2e} (tol {PRIMITIVE_TOL:.0e}); \
         meta-gradient rel err {meta:.2e} (tol {META_GRADIENT_TOL:.0e}) -> {}",
        checks.len(),
        seeds.len(),
        worst.primitive,
        worst.max_rel_err,
        verdict(ok)
    );
    assert!(
        worst.max_rel_err < PRIMITIVE_TOL,
        "primitive `{}` gradient off by {:.3e}",
        worst.primitive,
        worst.max_rel_err
    );
    assert!(meta < META_GRADIENT_TOL, "meta-gradient off by {meta:.3e}");
}

// ── Criterion 3: synthetic oracle ───────────────────────────────────────

#[test]
fn criterion_3_synthetic_oracle() {
    /// Non-adaptive Bayes accuracy at σ = 1: the best decision rule that
    /// cannot see the domain errs exactly where the two centers'
    /// posteriors cross, giving 1 − (Φ(2) − Φ(1)). Frozen from an
    /// independent numerical integration.
    const FROZEN_BAYES: f64 = 0.864_094_878_016_722_1;

    let out = synthetic_oracle(0).expect("synthetic oracle");
    assert!(
        (out.bayes_nonadaptive - FROZEN_BAYES).abs() < 1e-9,
        "computed Bayes accuracy {:.12} drifted from the frozen oracle {FROZEN_BAYES:.12}",
        out.bayes_nonadaptive
    );
    let arm_gap = out.arm_cml.average - out.bayes_nonadaptive;
    let erm_gap = out.erm.average - out.bayes_nonadaptive;
    let ok = arm_gap >= SYNTHETIC_ARM_MARGIN && erm_gap.abs() <= SYNTHETIC_ERM_BAND;
    println!(
        "criterion 3: bayes {FROZEN_BAYES:.4}; arm-cml avg {:.4} ({arm_gap:+.4}, need >= {SYNTHETIC_ARM_MARGIN:+.2}); \
         erm avg {:.4} ({erm_gap:+.4}, need within +/-{SYNTHETIC_ERM_BAND:.2}) -> {}",
        out.arm_cml.average,
        out.erm.average,
        verdict(ok)
    );
    assert!(
        arm_gap >= SYNTHETIC_ARM_MARGIN,
        "contextual adaptation beats Bayes by only {arm_gap:+.4}"
    );
    assert!(
        erm_gap.abs() <= SYNTHETIC_ERM_BAND,
        "erm sits {erm_gap:+.4} from the non-adaptive Bayes ceiling"
    );
}

// ── Criteria 4 & 5: trained-run orderings (consume run artifacts) ───────

/// Per-seed worst-case and average accuracy of one finished run,
/// recomputed from its per-domain `results.csv`.
fn run_metrics(results_csv: &Path) -> (f64, f64) {
    let mut reader = csv::Reader::from_path(results_csv)
        .unwrap_or_else(|e| panic!("open {}: {e}", results_csv.display()));
    let headers = reader.headers().expect("headers").clone();
    let acc_col = headers.iter().position(|h| h == "accuracy").expect("accuracy column");
    let mut accs = Vec::new();
    for record in reader.records() {
        let record = record.expect("row");
        accs.push(record[acc_col].parse::<f64>().expect("accuracy value"));
    }
    assert!(!accs.is_empty(), "{} has no rows", results_csv.display());
    let wc = accs.iter().cloned().fold(f64::INFINITY, f64::min);
    let avg = accs.iter().sum::<f64>() / accs.len() as f64;
    (wc, avg)
}

/// Reads one key out of a run's resolved config.
fn resolved_value(run: &Path, key: &str) -> Option<String> {
    let text = std::fs::read_to_string(run.join("config.resolved.cfg")).ok()?;
    text.lines().find_map(|l| {
        let (k, v) = l.split_once('=')?;
        (k.trim() == key).then(|| v.trim().to_string())
    })
}

/// Finds finished runs of `method` across seeds 0..2, keeping only those
/// whose resolved config matches the wanted filter width.
fn finished_runs(method: Method, conv_filters: &str) -> Option<Vec<PathBuf>> {
    let root = runs_root();
    let mut by_seed: BTreeMap<u64, PathBuf> = BTreeMap::new();
    for entry in std::fs::read_dir(&root).ok()? {
        let dir = entry.ok()?.path();
        let name = dir.file_name()?.to_string_lossy().into_owned();
        let Some(rest) = name.strip_prefix(&format!("{}-", method.name())) else {
            continue;
        };
        let Some((_digest, seed)) = rest.split_once("-s") else { continue };
        let Ok(seed) = seed.parse::<u64>() else { continue };
        if seed > 2 || !dir.join("results.csv").is_file() {
            continue;
        }
        if resolved_value(&dir, "conv_filters").as_deref() == Some(conv_filters) {
            by_seed.insert(seed, dir);
        }
    }
    (by_seed.len() == 3).then(|| by_seed.into_values().collect())
}

/// Mean worst-case and average accuracy over a method's three seeds.
fn seed_mean_metrics(runs: &[PathBuf]) -> (f64, f64) {
    let pairs: Vec<(f64, f64)> =
        runs.iter().map(|r| run_metrics(&r.join("results.csv"))).collect();
    let s = summarize_seeds(&pairs).expect("three seeds");
    (s.worst_case_mean, s.average_mean)
}

#[test]
#[ignore = "consumes the multi-hour desk-scale artifacts; run scripts/desk_runs.sh first"]
fn criterion_4_desk_scale_ordering() {
    const CML_MARGIN: f64 = 0.05;
    const LL_MARGIN: f64 = 0.05;
    const BN_MARGIN: f64 = 0.03;

    let mut wc = BTreeMap::new();
    for method in [Method::Erm, Method::ArmCml, Method::ArmBn, Method::ArmLl] {
        let runs = finished_runs(method, "32").unwrap_or_else(|| {
            panic!(
                "need 3 finished desk-scale runs of `{}` under {} (scripts/desk_runs.sh)",
                method.name(),
                runs_root().display()
            )
        });
        let (wc_mean, avg_mean) = seed_mean_metrics(&runs);
        println!(
            "criterion 4 [{}]: worst-case {:.4}, average {:.4} (mean of 3 seeds)",
            method.name(),
            wc_mean,
            avg_mean
        );
        wc.insert(method.name(), wc_mean);
    }
    let cml_gap = wc["arm-cml"] - wc["erm"];
    let ll_gap = wc["arm-ll"] - wc["erm"];
    let bn_gap = wc["arm-bn"] - wc["erm"];
    let ok = cml_gap >= CML_MARGIN && ll_gap >= LL_MARGIN && bn_gap >= BN_MARGIN;
    println!(
        "criterion 4: worst-case gaps over erm — arm-cml {cml_gap:+.4} (need >= {CML_MARGIN:+.2}), \
         arm-ll {ll_gap:+.4} (need >= {LL_MARGIN:+.2}), arm-bn {bn_gap:+.4} (need >= {BN_MARGIN:+.2}) -> {}",
        verdict(ok)
    );
    assert!(cml_gap >= CML_MARGIN, "arm-cml worst-case gap {cml_gap:+.4} < {CML_MARGIN:+.2}");
    assert!(ll_gap >= LL_MARGIN, "arm-ll worst-case gap {ll_gap:+.4} < {LL_MARGIN:+.2}");
    assert!(bn_gap >= BN_MARGIN, "arm-bn worst-case gap {bn_gap:+.4} < {BN_MARGIN:+.2}");
}

#[test]
#[ignore = "full-width reproduction is a multi-day CPU job; train with configs/rotmnist_full.cfg"]
fn criterion_5_full_config_reproduction() {
    const WC_TOL: f64 = 0.03;
    const AVG_TOL: f64 = 0.015;
    /// Published MNIST-column reference (worst case, average), in
    /// fractions.
    const REFERENCE: [(Method, f64, f64); 4] = [
        (Method::Erm, 0.745, 0.936),
        (Method::ArmCml, 0.880, 0.963),
        (Method::ArmBn, 0.833, 0.956),
        (Method::ArmLl, 0.889, 0.969),
    ];

    let mut failures = Vec::new();
    for (method, ref_wc, ref_avg) in REFERENCE {
        let runs = finished_runs(method, "128").unwrap_or_else(|| {
            panic!(
                "need 3 finished full-width runs of `{}` under {} \
                 (train with configs/rotmnist_full.cfg, seeds 0..2, then eval)",
                method.name(),
                runs_root().display()
            )
        });
        let (wc_mean, avg_mean) = seed_mean_metrics(&runs);
        let ok = (wc_mean - ref_wc).abs() <= WC_TOL && (avg_mean - ref_avg).abs() <= AVG_TOL;
        println!(
            "criterion 5 [{}]: worst-case {wc_mean:.4} vs {ref_wc:.3} (tol +/-{WC_TOL:.2}), \
             average {avg_mean:.4} vs {ref_avg:.3} (tol +/-{AVG_TOL:.3}) -> {}",
            method.name(),
            verdict(ok)
        );
        if !ok {
            failures.push(method.name());
        }
    }
    assert!(failures.is_empty(), "outside reproduction band: {failures:?}");
}

// ── Criterion 6: streaming convergence ──────────────────────────────────

#[test]
fn criterion_6_streaming_convergence() {
    const GAP_TOL: f64 = 0.02;
    const WITHIN_POINTS: usize = 10;
    const POINTS_PER_DOMAIN: usize = 500;

    if !have_data() {
        skip_line("criterion 6");
        return;
    }
    // A small contextual model trained briefly on the real benchmark:
    // the convergence property under test is how fast the streamed
    // context approaches the batch context, which does not depend on
    // reaching reference accuracy.
    let train_pool = idx::load_pool(
        &data_root().join("train-images-idx3-ubyte"),
        &data_root().join("train-labels-idx1-ubyte"),
    )
    .expect("train pool");
    let bench = build_rotated_mnist(&train_pool, load_test_pool(), 0).expect("benchmark");
    let mut bundle = ModelBundle::for_images_at_width(Method::ArmCml, 8, 5).expect("bundle");
    let cfg = TrainConfig {
        epochs: 2,
        val_every: usize::MAX,
        seed: 5,
        ..TrainConfig::default()
    };
    train_arm(&cfg, &mut bundle, &bench.train, None, None).expect("quick training");

    let grid: Vec<usize> = (1..=WITHIN_POINTS).chain([50]).collect();
    let mut rng = rng::stream(5, "acceptance.curve");
    let mut at_ten = 0.0f64;
    let mut batch_mean = 0.0f64;
    let mut at_one = 0.0f64;
    for &angle in &ANGLES {
        let idx = sample(&mut rng, bench.test_pool.len(), POINTS_PER_DOMAIN).into_vec();
        let (x, y) = rotate_pool_sample(&bench.test_pool, &idx, angle).expect("rotate");
        let curve = streaming_curve(&bundle, &x, &y, &grid).expect("curve");
        at_one += curve[0].accuracy;
        at_ten += curve[WITHIN_POINTS - 1].accuracy;
        batch_mean += score_domain(&bundle, AdaptSettings::default(), "d", &x, &y, 50)
            .expect("batch score")
            .accuracy();
    }
    let n = ANGLES.len() as f64;
    let (at_one, at_ten, batch_mean) = (at_one / n, at_ten / n, batch_mean / n);
    let gap = (at_ten - batch_mean).abs();
    let ok = gap <= GAP_TOL;
    println!(
        "criterion 6: streamed accuracy t=1 {at_one:.4}, t={WITHIN_POINTS} {at_ten:.4} vs batch {batch_mean:.4} \
         (gap {gap:.4}, tol {GAP_TOL:.2}; mean over {} domains x {POINTS_PER_DOMAIN} points) -> {}",
        ANGLES.len(),
        verdict(ok)
    );
    assert!(
        ok,
        "streamed accuracy at {WITHIN_POINTS} points sits {gap:.4} from batch (tolerance {GAP_TOL})"
    );
}

// ── Criterion 7: protocol fidelity ──────────────────────────────────────

#[test]
fn criterion_7_protocol_fidelity() {
    // Checkpoint selection: best validation worst-case, earliest on ties.
    assert_eq!(select_checkpoint(&[0.2, 0.5, 0.5, 0.4]).unwrap(), 1);
    assert_eq!(select_checkpoint(&[0.7]).unwrap(), 0);
    assert!(select_checkpoint(&[]).is_err());
    assert!(select_checkpoint(&[0.3, f64::NAN]).is_err());

    // Summary arithmetic: mean +/- sample standard deviation / sqrt(3).
    let s = summarize_seeds(&[(0.80, 0.90), (0.82, 0.91), (0.84, 0.92)]).unwrap();
    assert!((s.worst_case_mean - 0.82).abs() < 1e-12);
    let sample_std = 0.02f64; // of {0.80, 0.82, 0.84}, with the n-1 divisor
    assert!((s.worst_case_sem - sample_std / 3f64.sqrt()).abs() < 1e-12);
    assert!((s.average_mean - 0.91).abs() < 1e-12);

    // Split counts: the published 32292-example skew, exactly.
    let split_note = if have_data() {
        let train_pool = idx::load_pool(
            &data_root().join("train-images-idx3-ubyte"),
            &data_root().join("train-labels-idx1-ubyte"),
        )
        .expect("train pool");
        let bench = build_rotated_mnist(&train_pool, load_test_pool(), 0).expect("benchmark");
        let counts: Vec<usize> = bench.train.domains.iter().map(|d| d.x.shape()[0]).collect();
        assert_eq!(counts, DOMAIN_COUNTS.to_vec());
        assert_eq!(counts.iter().sum::<usize>(), 32292);
        assert_eq!(bench.val_pool.len(), 60000 - TRAIN_POOL);
        assert_eq!(bench.test_pool.len(), 10000);
        "split counts 7560/2160/648/324/108 x14 = 32292, val pool 6000, test pool 10000"
    } else {
        "split counts SKIPPED (data not prepared)"
    };
    println!(
        "criterion 7: checkpoint selection = best worst-case (earliest tie); \
         summary = mean +/- std/sqrt(3); {split_note} -> PASS"
    );
}
