//! The `train` subcommand: meta-train one model into a run directory.
//!
//! Validation runs every `val_every` epochs (and on the last), and every
//! validated epoch is checkpointed — model selection happens later, in
//! `eval`, by re-reading the checkpoint index. Training randomness comes
//! entirely from the configured seed, so rerunning a config reproduces
//! the run bit for bit.

use std::time::Instant;

use arm_core::arm::train::{train_arm, EpochLog, TrainConfig};
use arm_core::arm::{AdaptSettings, ModelBundle};
use arm_core::data::rotmnist::{build_rotated_mnist, ANGLES};
use arm_core::eval::{make_validator, select_checkpoint};
use arm_core::nn::checkpoint::{self, Checkpoint};
use arm_core::nn::AdamConfig;
use arm_core::rng;

use crate::config::RunConfig;
use crate::layout::{IndexRow, RowWriter, RunDir, TrainLogRow};
use crate::{data, CliResult, Failure, TrainArgs};

pub fn run(args: &TrainArgs) -> CliResult<()> {
    let cfg = RunConfig::load(&args.config, &args.set, args.seed)?;
    let run = RunDir::create(&args.out_root, &cfg.run_name(), args.force)?;
    std::fs::write(run.config_path(), cfg.resolved_text())
        .map_err(|e| Failure::Runtime(anyhow::anyhow!("writing resolved config: {e}")))?;
    println!("run {}", run.root.display());

    let data_root = data::resolve_root(args.data_root.as_deref());
    let started = Instant::now();
    eprintln!("building rotated-digit benchmark (data_seed {})…", cfg.data_seed);
    let train_pool = data::load_train_pool(&data_root)?;
    let test_pool = data::load_test_pool(&data_root)?;
    let bench = build_rotated_mnist(&train_pool, test_pool, cfg.data_seed)?;
    drop(train_pool);
    eprintln!(
        "  {} domains, {} training examples  [{:.1}s]",
        bench.train.domains.len(),
        bench.train.total_len(),
        started.elapsed().as_secs_f64()
    );

    let mut bundle = ModelBundle::for_images_at_width(cfg.method, cfg.conv_filters, cfg.seed)?;
    eprintln!(
        "model {}: {} parameters",
        cfg.method.name(),
        bundle.params.total_scalars()
    );

    let settings = AdaptSettings { alpha: cfg.alpha, steps: cfg.inner_steps };
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        meta_batch: cfg.meta_batch,
        group_size: cfg.k,
        adapt: settings,
        adam: AdamConfig { lr: cfg.lr, ..AdamConfig::default() },
        seed: cfg.seed,
        val_every: cfg.val_every,
        steps_per_epoch: cfg.steps_per_epoch,
    };

    let mut validate = make_validator(
        &bench.val_pool,
        &ANGLES,
        settings,
        cfg.k,
        cfg.val_points,
        cfg.seed,
        rng::stream(cfg.seed, "eval.val"),
    );

    let mut log_writer = RowWriter::create(&run.train_log_path())?;
    let mut index_writer = RowWriter::create(&run.index_path())?;
    let ckpt_dir = run.checkpoints_dir();
    let method_name = cfg.method.name().to_string();
    let total_epochs = cfg.epochs;

    let mut on_epoch = |log: &EpochLog, bundle: &ModelBundle| -> arm_core::Result<()> {
        log_writer
            .write(&TrainLogRow {
                epoch: log.epoch,
                mean_loss: log.mean_loss,
                val_worst_case: log.val.map(|v| v.0),
                val_average: log.val.map(|v| v.1),
            })
            .map_err(to_core)?;
        let mut val_note = String::new();
        if let Some((wc, avg)) = log.val {
            let file = format!("epoch-{:03}.ckpt", log.epoch);
            checkpoint::save(
                &ckpt_dir.join(&file),
                &Checkpoint {
                    epoch: log.epoch as u64,
                    method: method_name.clone(),
                    params: bundle.params.clone(),
                    buffers: bundle.buffers.clone(),
                    opt: None,
                },
            )?;
            index_writer
                .write(&IndexRow { epoch: log.epoch, val_worst_case: wc, val_average: avg, file })
                .map_err(to_core)?;
            val_note = format!("  val wc {wc:.4} avg {avg:.4}  [checkpoint]");
        }
        eprintln!(
            "[{:>7.1}s] epoch {:>3}/{}  loss {:.4}{}",
            started.elapsed().as_secs_f64(),
            log.epoch + 1,
            total_epochs,
            log.mean_loss,
            val_note
        );
        Ok(())
    };

    train_arm(
        &train_cfg,
        &mut bundle,
        &bench.train,
        Some(&mut validate),
        Some(&mut on_epoch),
    )?;

    // Echo which checkpoint `eval` will pick, so a finished training run
    // is legible on its own.
    let index = crate::layout::read_index(&run.index_path())?;
    let wc: Vec<f64> = index.iter().map(|r| r.val_worst_case).collect();
    let best = select_checkpoint(&wc)?;
    println!(
        "done in {:.1}s; best checkpoint epoch {} (val worst-case {:.4}, average {:.4})",
        started.elapsed().as_secs_f64(),
        index[best].epoch,
        index[best].val_worst_case,
        index[best].val_average
    );
    Ok(())
}

/// Adapter for I/O failures inside the epoch hook, whose signature is
/// fixed by the training loop.
fn to_core(f: Failure) -> arm_core::Error {
    arm_core::Error::io("run directory", std::io::Error::other(f.to_string()))
}
