//! The `stream-eval` subcommand: trace a trained model's accuracy as
//! unlabeled test points arrive one at a time.
//!
//! For each domain it samples `stream_points` test images, feeds them to
//! the streaming adapter in order, and scores the whole sample at each
//! recorded stream length; the all-at-once batch accuracy under the
//! training protocol's K is written alongside for comparison.

use rand::seq::index::sample;

use arm_core::arm::{AdaptSettings, Method};
use arm_core::data::rotmnist::{domain_name, rotate_pool_sample, ANGLES};
use arm_core::eval::{score_domain, streaming_curve};
use arm_core::rng;

use crate::config::RunConfig;
use crate::layout::{write_rows, RunDir, StreamRow};
use crate::svg::{self, Series};
use crate::{data, evaluate, CliResult, Failure, StreamArgs};

pub fn run(args: &StreamArgs) -> CliResult<()> {
    let dir = RunDir::open(&args.run)?;
    let cfg = RunConfig::load_resolved(&dir.config_path())?;
    match cfg.method {
        Method::ArmCml | Method::CmlAblation | Method::ArmBn | Method::BnAdapt => {}
        other => {
            return Err(Failure::Config(format!(
                "method `{}` has no streaming adaptation rule; stream-eval applies to \
                 arm-cml, cml-ablation, arm-bn, bn-adapt",
                other.name()
            )));
        }
    }

    let data_root = data::resolve_root(args.data_root.as_deref());
    let pool = data::load_test_pool(&data_root)?;
    let (bundle, picked) = evaluate::load_best_checkpoint(&dir, &cfg)?;
    let points = args.points.unwrap_or(cfg.stream_points);
    if points == 0 || points > pool.len() {
        return Err(Failure::Config(format!(
            "--points must be between 1 and the test pool size {}, got {points}",
            pool.len()
        )));
    }
    let grid = parse_grid(args.grid.as_deref(), points, cfg.k)?;
    let settings = AdaptSettings { alpha: cfg.alpha, steps: cfg.inner_steps };
    let mut rng = rng::stream(cfg.seed, "eval.stream");

    println!(
        "streaming {} (checkpoint epoch {}) over {} points/domain, recording at {:?}",
        cfg.method.name(),
        picked.epoch,
        points,
        grid
    );

    let mut rows: Vec<StreamRow> = Vec::new();
    let mut curves: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    let mut batch_levels: Vec<f64> = Vec::new();
    for &angle in ANGLES.iter() {
        let name = domain_name(angle);
        let idx = sample(&mut rng, pool.len(), points).into_vec();
        let (x, y) = rotate_pool_sample(&pool, &idx, angle)?;
        let curve = streaming_curve(&bundle, &x, &y, &grid)?;
        let batch = score_domain(&bundle, settings, &name, &x, &y, cfg.k)?.accuracy();
        for p in &curve {
            rows.push(StreamRow {
                method: cfg.method.name().to_string(),
                seed: cfg.seed,
                domain: name.clone(),
                t: p.t,
                accuracy: p.accuracy,
                batch_accuracy: batch,
            });
        }
        let final_acc = curve.last().map(|p| p.accuracy).unwrap_or(0.0);
        eprintln!("  {name}  batch {batch:.4}  streamed@{} {final_acc:.4}", grid.last().unwrap());
        curves.push((name, curve.iter().map(|p| (p.t as f64, p.accuracy)).collect()));
        batch_levels.push(batch);
    }
    write_rows(&dir.streaming_path(), &rows)?;

    // Mean curve across domains, drawn over the faint per-domain traces.
    let mean: Vec<(f64, f64)> = grid
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let m = curves.iter().map(|(_, c)| c[i].1).sum::<f64>() / curves.len() as f64;
            (t as f64, m)
        })
        .collect();
    let batch_mean = batch_levels.iter().sum::<f64>() / batch_levels.len() as f64;
    let mut series: Vec<Series<'_>> = curves
        .iter()
        .map(|(name, pts)| Series { label: name, points: pts, emphasis: false })
        .collect();
    series.push(Series { label: "mean over domains", points: &mean, emphasis: true });
    svg::line_chart(
        &dir.streaming_svg_path(),
        &format!("{} seed {} — accuracy vs. points streamed", cfg.method.name(), cfg.seed),
        "points streamed",
        "accuracy",
        &series,
        Some((batch_mean, "batch (all at once)")),
    )?;

    let final_mean = mean.last().map(|p| p.1).unwrap_or(0.0);
    println!(
        "mean over domains at t={}: {:.4}  vs batch {:.4}  (gap {:+.4})  -> {}",
        grid.last().unwrap(),
        final_mean,
        batch_mean,
        final_mean - batch_mean,
        dir.streaming_path().display()
    );
    Ok(())
}

/// Stream lengths to record: a dense head (each of the first ten points),
/// then sparser marks up to K and the sample size.
fn default_grid(points: usize, k: usize) -> Vec<usize> {
    let mut grid: Vec<usize> = (1..=10).collect();
    grid.extend([15, 20, 30, 40, 50, k, points]);
    grid.retain(|&t| t <= points);
    grid.sort_unstable();
    grid.dedup();
    grid
}

fn parse_grid(spec: Option<&str>, points: usize, k: usize) -> CliResult<Vec<usize>> {
    let Some(spec) = spec else {
        return Ok(default_grid(points, k));
    };
    let mut grid = Vec::new();
    for part in spec.split(',') {
        let t: usize = part.trim().parse().map_err(|_| {
            Failure::Config(format!("--grid expects comma-separated integers, got `{part}`"))
        })?;
        if t == 0 || t > points {
            return Err(Failure::Config(format!(
                "--grid entries must be between 1 and the sample size {points}, got {t}"
            )));
        }
        grid.push(t);
    }
    grid.sort_unstable();
    grid.dedup();
    if grid.is_empty() {
        return Err(Failure::Config("--grid is empty".to_string()));
    }
    Ok(grid)
}
