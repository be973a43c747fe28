//! `arm` — train and evaluate test-time-adaptive models on domain shift.
//!
//! Subcommands cover the whole experiment lifecycle: `prepare-data`
//! verifies (or fetches) the digit corpus, `train` meta-trains a model
//! into a content-addressed run directory, `eval` scores selected
//! checkpoints on held-out test domains, `stream-eval` traces accuracy as
//! unlabeled points arrive one at a time, `verify` checks framework
//! invariants, and `oracle-demo` exercises the synthetic testbed with
//! known Bayes rates.
//!
//! Exit codes separate failure classes: `1` for usage or configuration
//! errors, `2` when a verification check finds a breached invariant, and
//! `3` for runtime failures (I/O, missing data, diverged training).

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod config;
mod data;
mod evaluate;
mod layout;
mod oracle;
mod stream;
mod svg;
mod train;
mod verify_cmd;

// ── Failure classes ─────────────────────────────────────────────────────

/// A command failure, tagged with the exit-code class it belongs to.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or configuration; nothing was run.
    Config(String),
    /// A verification check ran to completion and found a breach.
    Verification(String),
    /// The environment failed us: I/O, missing files, diverged training.
    Runtime(anyhow::Error),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Verification(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(msg) => write!(f, "{msg}"),
            Failure::Verification(msg) => write!(f, "{msg}"),
            Failure::Runtime(err) => write!(f, "{err:#}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        Failure::Runtime(err)
    }
}

impl From<arm_core::Error> for Failure {
    fn from(err: arm_core::Error) -> Self {
        Failure::Runtime(anyhow::Error::new(err))
    }
}

pub type CliResult<T> = Result<T, Failure>;

// ── Command line ────────────────────────────────────────────────────────

#[derive(Parser)]
#[command(
    name = "arm",
    version,
    about = "Adaptive risk minimization: meta-training and test-time adaptation under domain shift"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Verify (or fetch) the digit dataset and write its manifest
    PrepareData(DataArgs),
    /// Meta-train a model; logs and checkpoints land in a run directory
    Train(TrainArgs),
    /// Score the best checkpoint of one or more runs on test domains
    Eval(EvalArgs),
    /// Trace accuracy while unlabeled test points stream in one at a time
    StreamEval(StreamArgs),
    /// Check framework invariants: gradients, meta-gradients, stream/batch
    Verify(VerifyArgs),
    /// Train on the synthetic two-center problem and compare to Bayes rates
    OracleDemo(OracleArgs),
}

#[derive(clap::Args)]
pub struct DataArgs {
    /// Directory holding the four IDX files (default: $ARM_DATA_ROOT or data/mnist)
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    /// Copy missing files from this directory instead of fetching
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Fetch missing files over the network (requires `npm` and `tar`)
    #[arg(long)]
    pub fetch: bool,
}

#[derive(clap::Args)]
pub struct TrainArgs {
    /// Path to a `key = value` configuration file
    #[arg(long)]
    pub config: PathBuf,
    /// Override one configuration key (repeatable), e.g. `--set epochs=5`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Training seed (shorthand for `--set seed=N`)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory holding the digit data (default: $ARM_DATA_ROOT or data/mnist)
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    /// Directory that receives run directories
    #[arg(long, default_value = "runs")]
    pub out_root: PathBuf,
    /// Replace the run directory if it already exists
    #[arg(long)]
    pub force: bool,
}

#[derive(clap::Args)]
pub struct EvalArgs {
    /// Run directory to score (repeat for a multi-seed summary)
    #[arg(long, required = true)]
    pub run: Vec<PathBuf>,
    /// Directory holding the digit data (default: $ARM_DATA_ROOT or data/mnist)
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    /// Test points per domain (default: the run's `test_points`)
    #[arg(long)]
    pub points: Option<usize>,
    /// Where to write the cross-seed summary CSV (default: next to the runs)
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct StreamArgs {
    /// Run directory whose best checkpoint is streamed
    #[arg(long)]
    pub run: PathBuf,
    /// Directory holding the digit data (default: $ARM_DATA_ROOT or data/mnist)
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    /// Test points per domain (default: the run's `stream_points`)
    #[arg(long)]
    pub points: Option<usize>,
    /// Comma-separated stream sizes to record, e.g. `1,2,5,10,50`
    #[arg(long)]
    pub grid: Option<String>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Section {
    /// Finite-difference checks for every autodiff primitive
    Grad,
    /// The meta-gradient through one learned-loss inner step
    Meta,
    /// Stream/batch adaptation agreement on noise input
    Stream,
}

#[derive(clap::Args)]
pub struct VerifyArgs {
    /// Number of seeds per gradient check
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    /// Which sections to run (default: all)
    #[arg(long, value_delimiter = ',')]
    pub section: Vec<Section>,
}

#[derive(clap::Args)]
pub struct OracleArgs {
    /// Seed for data generation and training
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

// ── Entry point ─────────────────────────────────────────────────────────

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // `--help` and `--version` are successes; everything else is
            // a usage error.
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.cmd {
        Cmd::PrepareData(args) => data::prepare(&args),
        Cmd::Train(args) => train::run(&args),
        Cmd::Eval(args) => evaluate::run(&args),
        Cmd::StreamEval(args) => stream::run(&args),
        Cmd::Verify(args) => verify_cmd::run(&args),
        Cmd::OracleDemo(args) => oracle::run(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
