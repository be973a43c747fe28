//! Run-directory layout and the CSV files that live inside it.
//!
//! One training run owns one directory:
//!
//! ```text
//! runs/arm-cml-3f9c2a81d07e-s0/
//!   config.resolved.cfg     the exact configuration the run used
//!   train_log.csv           per-epoch loss and validation accuracies
//!   checkpoints/
//!     index.csv             epoch, validation scores, file name
//!     epoch-000.ckpt        parameters + batch-norm buffers
//!   results.csv             per-domain test accuracy (written by eval)
//!   domains.svg             bar chart of the same (CSV is authoritative)
//!   streaming.csv           accuracy vs. points streamed (stream-eval)
//!   streaming.svg           line chart of the same
//! ```
//!
//! Rows are flushed as they are written, so an interrupted run keeps a
//! readable log up to its last finished epoch.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::{CliResult, Failure};

// ── Row types ───────────────────────────────────────────────────────────

/// One epoch in `train_log.csv`; the validation columns stay empty on
/// epochs where validation did not run.
#[derive(Debug, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_worst_case: Option<f64>,
    pub val_average: Option<f64>,
}

/// One checkpoint in `checkpoints/index.csv`.
#[derive(Debug, Serialize, Deserialize)]
pub struct IndexRow {
    pub epoch: usize,
    pub val_worst_case: f64,
    pub val_average: f64,
    pub file: String,
}

/// One domain's test score in `results.csv`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub seed: u64,
    pub domain: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

/// One `(domain, stream length)` point in `streaming.csv`. The batch
/// column repeats each domain's all-at-once accuracy for comparison.
#[derive(Debug, Serialize, Deserialize)]
pub struct StreamRow {
    pub method: String,
    pub seed: u64,
    pub domain: String,
    pub t: usize,
    pub accuracy: f64,
    pub batch_accuracy: f64,
}

/// The cross-seed aggregate written by `eval` over several runs.
#[derive(Debug, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub digest: String,
    pub seeds: usize,
    pub worst_case_mean: f64,
    pub worst_case_sem: f64,
    pub average_mean: f64,
    pub average_sem: f64,
}

// ── The directory ───────────────────────────────────────────────────────

/// A run directory, created by `train` and consumed by the evaluators.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    /// Creates `<out_root>/<name>` fresh. An existing directory is an
    /// error unless `force`, in which case it is removed first.
    pub fn create(out_root: &Path, name: &str, force: bool) -> CliResult<RunDir> {
        let root = out_root.join(name);
        if root.exists() {
            if !force {
                return Err(Failure::Runtime(anyhow::anyhow!(
                    "run directory `{}` already exists (pass --force to replace it)",
                    root.display()
                )));
            }
            fs::remove_dir_all(&root)
                .with_context(|| format!("removing `{}`", root.display()))?;
        }
        fs::create_dir_all(root.join("checkpoints"))
            .with_context(|| format!("creating `{}`", root.display()))?;
        Ok(RunDir { root })
    }

    /// Opens an existing run directory; it must contain the resolved
    /// configuration `train` wrote.
    pub fn open(path: &Path) -> CliResult<RunDir> {
        let dir = RunDir { root: path.to_path_buf() };
        if !dir.config_path().is_file() {
            return Err(Failure::Config(format!(
                "`{}` is not a run directory (no config.resolved.cfg; was it created by `arm train`?)",
                path.display()
            )));
        }
        Ok(dir)
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.resolved.cfg")
    }

    pub fn train_log_path(&self) -> PathBuf {
        self.root.join("train_log.csv")
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn index_path(&self) -> PathBuf {
        self.checkpoints_dir().join("index.csv")
    }

    pub fn results_path(&self) -> PathBuf {
        self.root.join("results.csv")
    }

    pub fn domains_svg_path(&self) -> PathBuf {
        self.root.join("domains.svg")
    }

    pub fn streaming_path(&self) -> PathBuf {
        self.root.join("streaming.csv")
    }

    pub fn streaming_svg_path(&self) -> PathBuf {
        self.root.join("streaming.svg")
    }
}

// ── CSV helpers ─────────────────────────────────────────────────────────

/// A CSV writer that flushes after every row, so logs survive ^C.
pub struct RowWriter {
    writer: csv::Writer<File>,
    path: PathBuf,
}

impl RowWriter {
    pub fn create(path: &Path) -> CliResult<RowWriter> {
        let file =
            File::create(path).with_context(|| format!("creating `{}`", path.display()))?;
        Ok(RowWriter { writer: csv::Writer::from_writer(file), path: path.to_path_buf() })
    }

    pub fn write<T: Serialize>(&mut self, row: &T) -> CliResult<()> {
        self.writer
            .serialize(row)
            .and_then(|()| self.writer.flush().map_err(csv::Error::from))
            .map_err(|e| {
                Failure::Runtime(anyhow::anyhow!("writing `{}`: {e}", self.path.display()))
            })
    }
}

/// Writes a whole table at once (results, summaries).
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = RowWriter::create(path)?;
    for row in rows {
        w.write(row)?;
    }
    Ok(())
}

/// Reads the checkpoint index of a run.
pub fn read_index(path: &Path) -> CliResult<Vec<IndexRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| {
        Failure::Runtime(anyhow::anyhow!(
            "reading `{}`: {e} (did training reach its first validation pass?)",
            path.display()
        ))
    })?;
    let rows: Result<Vec<IndexRow>, _> = reader.deserialize().collect();
    rows.map_err(|e| Failure::Runtime(anyhow::anyhow!("reading `{}`: {e}", path.display())))
}
