//! The `eval` subcommand: score the best checkpoint of one or more runs
//! on the held-out test domains.
//!
//! Model selection is by validation worst-case accuracy, re-read from
//! each run's checkpoint index. Passing several runs of the same
//! experiment family (same digest, different seeds) additionally writes
//! a cross-seed summary with standard errors.

use std::path::PathBuf;

use arm_core::arm::{AdaptSettings, ModelBundle};
use arm_core::data::rotmnist::ANGLES;
use arm_core::eval::{evaluate_rotated_pool, select_checkpoint, summarize_seeds, MetricsReport};
use arm_core::nn::checkpoint::{self, Checkpoint};
use arm_core::rng;

use crate::config::RunConfig;
use crate::layout::{read_index, write_rows, ResultRow, RunDir, SummaryRow};
use crate::{data, svg, CliResult, EvalArgs, Failure};

pub fn run(args: &EvalArgs) -> CliResult<()> {
    let data_root = data::resolve_root(args.data_root.as_deref());
    let pool = data::load_test_pool(&data_root)?;

    let mut scored: Vec<(RunConfig, MetricsReport)> = Vec::new();
    for run_path in &args.run {
        let dir = RunDir::open(run_path)?;
        let cfg = RunConfig::load_resolved(&dir.config_path())?;
        let (bundle, picked) = load_best_checkpoint(&dir, &cfg)?;
        let points = args.points.unwrap_or(cfg.test_points);
        let settings = AdaptSettings { alpha: cfg.alpha, steps: cfg.inner_steps };
        let mut rng = rng::stream(cfg.seed, "eval.test");
        let report = evaluate_rotated_pool(
            &bundle, settings, &pool, &ANGLES, cfg.k, points, cfg.seed, &mut rng,
        )?;

        let rows: Vec<ResultRow> = report
            .per_domain
            .iter()
            .map(|d| ResultRow {
                method: cfg.method.name().to_string(),
                seed: cfg.seed,
                domain: d.domain.clone(),
                correct: d.correct,
                total: d.total,
                accuracy: d.accuracy(),
            })
            .collect();
        write_rows(&dir.results_path(), &rows)?;

        let labels: Vec<String> = rows.iter().map(|r| r.domain.clone()).collect();
        let values: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
        svg::bar_chart(
            &dir.domains_svg_path(),
            &format!("{} seed {} — test accuracy by domain", cfg.method.name(), cfg.seed),
            "accuracy",
            &labels,
            &values,
        )?;

        println!(
            "{}  (checkpoint epoch {}, val worst-case {:.4})",
            dir.root.display(),
            picked.epoch,
            picked.val_worst_case
        );
        for r in &rows {
            println!("  {}  {:.4}  ({}/{})", r.domain, r.accuracy, r.correct, r.total);
        }
        println!(
            "  worst-case {:.4}   average {:.4}   ({points} points/domain)",
            report.worst_case, report.average
        );
        scored.push((cfg, report));
    }

    if scored.len() > 1 {
        summarize(args, &scored)?;
    }
    Ok(())
}

/// Cross-seed aggregation: only meaningful for seed replicates of one
/// experiment, so digests must match and seeds must differ.
fn summarize(args: &EvalArgs, scored: &[(RunConfig, MetricsReport)]) -> CliResult<()> {
    let digest = scored[0].0.digest();
    for (cfg, _) in scored {
        if cfg.digest() != digest {
            return Err(Failure::Config(format!(
                "runs are not seed replicates of one experiment: digest {} != {digest}",
                cfg.digest()
            )));
        }
    }
    let mut seeds: Vec<u64> = scored.iter().map(|(c, _)| c.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    if seeds.len() != scored.len() {
        return Err(Failure::Config(
            "the same seed appears twice; a summary needs distinct seed replicates".to_string(),
        ));
    }

    let pairs: Vec<(f64, f64)> =
        scored.iter().map(|(_, r)| (r.worst_case, r.average)).collect();
    let s = summarize_seeds(&pairs)?;
    let method = scored[0].0.method.name().to_string();
    let row = SummaryRow {
        method: method.clone(),
        digest: digest.clone(),
        seeds: s.seeds,
        worst_case_mean: s.worst_case_mean,
        worst_case_sem: s.worst_case_sem,
        average_mean: s.average_mean,
        average_sem: s.average_sem,
    };
    let path = match &args.summary {
        Some(p) => p.clone(),
        None => default_summary_path(&args.run[0], &method, &digest),
    };
    write_rows(&path, &[row])?;
    println!(
        "summary over {} seeds: worst-case {:.4} ± {:.4}, average {:.4} ± {:.4}  -> {}",
        s.seeds,
        s.worst_case_mean,
        s.worst_case_sem,
        s.average_mean,
        s.average_sem,
        path.display()
    );
    Ok(())
}

fn default_summary_path(first_run: &PathBuf, method: &str, digest: &str) -> PathBuf {
    let parent = first_run.parent().unwrap_or_else(|| std::path::Path::new("."));
    parent.join(format!("summary-{method}-{digest}.csv"))
}

/// Rebuilds the model a run trained and loads its best checkpoint (by
/// validation worst-case accuracy) into it.
pub fn load_best_checkpoint(
    dir: &RunDir,
    cfg: &RunConfig,
) -> CliResult<(ModelBundle, crate::layout::IndexRow)> {
    let index = read_index(&dir.index_path())?;
    if index.is_empty() {
        return Err(Failure::Runtime(anyhow::anyhow!(
            "`{}` has an empty checkpoint index; did training reach a validation pass?",
            dir.index_path().display()
        )));
    }
    let wc: Vec<f64> = index.iter().map(|r| r.val_worst_case).collect();
    let best = select_checkpoint(&wc)?;
    let row = &index[best];
    let ck = checkpoint::load::<f32>(&dir.checkpoints_dir().join(&row.file))?;
    let mut bundle = ModelBundle::for_images_at_width(cfg.method, cfg.conv_filters, cfg.seed)?;
    restore(&mut bundle, ck)?;
    Ok((
        bundle,
        crate::layout::IndexRow {
            epoch: row.epoch,
            val_worst_case: row.val_worst_case,
            val_average: row.val_average,
            file: row.file.clone(),
        },
    ))
}

/// Swaps checkpointed parameters and buffers into a freshly assembled
/// bundle, after checking they actually belong to this architecture.
fn restore(bundle: &mut ModelBundle, ck: Checkpoint<f32>) -> CliResult<()> {
    if ck.method != bundle.method.name() {
        return Err(Failure::Runtime(anyhow::anyhow!(
            "checkpoint was trained with method `{}` but the run config says `{}`",
            ck.method,
            bundle.method.name()
        )));
    }
    if ck.params.len() != bundle.params.len() {
        return Err(Failure::Runtime(anyhow::anyhow!(
            "checkpoint has {} parameter tensors, the configured model {}; \
             was `conv_filters` edited after training?",
            ck.params.len(),
            bundle.params.len()
        )));
    }
    for e in bundle.params.entries() {
        let saved = ck.params.get(&e.name)?;
        if saved.shape() != e.tensor.shape() {
            return Err(Failure::Runtime(anyhow::anyhow!(
                "checkpoint parameter `{}` has shape {:?}, the configured model {:?}",
                e.name,
                saved.shape(),
                e.tensor.shape()
            )));
        }
    }
    bundle.params = ck.params;
    bundle.buffers = ck.buffers;
    Ok(())
}
