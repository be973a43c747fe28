//! Run configuration: a `key = value` file format with typed keys, flag
//! overrides, and a content digest that names the experiment.
//!
//! The digest hashes the canonical serialization of every key *except*
//! `seed`, so the seed replicates of one experiment share a family name
//! (`arm-cml-3f9c2a81d07e-s0`, `-s1`, `-s2`) and can be summarized
//! together. Writing the resolved configuration back into the run
//! directory makes every run self-describing: `eval` and `stream-eval`
//! re-read it rather than trusting flags to match.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use arm_core::arm::Method;
use sha2::{Digest, Sha256};

use crate::{CliResult, Failure};

// ── Configuration keys ──────────────────────────────────────────────────

/// Everything a training run needs beyond the data location. Defaults
/// give the desk-scale rotated-digit protocol; only `method` must be set.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    /// Only `rotmnist` exists; the key is explicit so configs are
    /// self-describing and future datasets don't change file meanings.
    pub dataset: String,
    pub seed: u64,
    /// Seed for the domain split and test sampling, kept separate from
    /// the training seed so all runs share one benchmark instance.
    pub data_seed: u64,
    pub epochs: usize,
    /// Optimizer steps per epoch; `auto` derives it from the dataset.
    pub steps_per_epoch: Option<usize>,
    /// Unlabeled-batch size K: examples per group during training and
    /// per adaptation batch at test time.
    pub k: usize,
    /// Groups per optimizer step.
    pub meta_batch: usize,
    pub lr: f64,
    /// Learned-loss inner step size.
    pub alpha: f64,
    /// Learned-loss inner step count.
    pub inner_steps: usize,
    /// Width of the prediction network's convolutions.
    pub conv_filters: usize,
    /// Validate (and checkpoint) every this many epochs.
    pub val_every: usize,
    /// Validation points sampled per domain per pass.
    pub val_points: usize,
    /// Test points sampled per domain by `eval`.
    pub test_points: usize,
    /// Test points sampled per domain by `stream-eval`.
    pub stream_points: usize,
}

const KNOWN_KEYS: [&str; 16] = [
    "method",
    "dataset",
    "seed",
    "data_seed",
    "epochs",
    "steps_per_epoch",
    "k",
    "meta_batch",
    "lr",
    "alpha",
    "inner_steps",
    "conv_filters",
    "val_every",
    "val_points",
    "test_points",
    "stream_points",
];

/// How many hex characters of the configuration hash name a run family.
const DIGEST_LEN: usize = 12;

// ── Parsing ─────────────────────────────────────────────────────────────

/// One `key = value` assignment and where it came from, for error
/// messages (`runs.cfg:7` or `--set epochs=5`).
#[derive(Debug, Clone)]
struct Assignment {
    key: String,
    value: String,
    location: String,
}

fn config_err(location: &str, message: impl std::fmt::Display) -> Failure {
    Failure::Config(format!("config error at {location}: {message}"))
}

/// Splits file text into assignments. `#` starts a comment anywhere on a
/// line; blank lines are skipped; duplicate keys within one file are
/// rejected (an override belongs on the command line, not in a second
/// line that silently wins).
fn parse_file(text: &str, origin: &str) -> CliResult<Vec<Assignment>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let location = format!("{origin}:{}", i + 1);
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(config_err(&location, "expected `key = value`"));
        };
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        if value.is_empty() {
            return Err(config_err(&location, format!("key `{key}` has no value")));
        }
        if !seen.insert(key.clone()) {
            return Err(config_err(
                &location,
                format!("key `{key}` was already set earlier in this file"),
            ));
        }
        out.push(Assignment { key, value, location });
    }
    Ok(out)
}

/// Splits `--set key=value` flags into assignments. Later flags may not
/// repeat earlier ones — there is no defined order among equals.
fn parse_sets(sets: &[String]) -> CliResult<Vec<Assignment>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for s in sets {
        let location = format!("--set {s}");
        let Some((key, value)) = s.split_once('=') else {
            return Err(config_err(&location, "expected `key=value`"));
        };
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        if value.is_empty() {
            return Err(config_err(&location, format!("key `{key}` has no value")));
        }
        if !seen.insert(key.clone()) {
            return Err(config_err(&location, format!("key `{key}` was set twice")));
        }
        out.push(Assignment { key, value, location });
    }
    Ok(out)
}

impl RunConfig {
    /// The desk-scale defaults, with no method chosen yet.
    fn base() -> RunConfig {
        RunConfig {
            method: Method::Erm, // placeholder; a real method is required below
            dataset: "rotmnist".to_string(),
            seed: 0,
            data_seed: 0,
            epochs: 25,
            steps_per_epoch: None,
            k: 50,
            meta_batch: 6,
            lr: 1e-4,
            alpha: 0.1,
            inner_steps: 1,
            conv_filters: 32,
            val_every: 10,
            val_points: 300,
            test_points: 3000,
            stream_points: 1000,
        }
    }

    /// Loads a config file, applies `--set` overrides and the `--seed`
    /// shorthand, and validates the result.
    pub fn load(path: &Path, sets: &[String], seed_flag: Option<u64>) -> CliResult<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| {
            Failure::Config(format!("cannot read config `{}`: {e}", path.display()))
        })?;
        let origin = path.display().to_string();
        Self::from_parts(parse_file(&text, &origin)?, sets, seed_flag)
    }

    /// Re-reads the resolved configuration a run directory was created
    /// with. Same format, no overrides.
    pub fn load_resolved(path: &Path) -> CliResult<RunConfig> {
        Self::load(path, &[], None)
    }

    fn from_parts(
        file: Vec<Assignment>,
        sets: &[String],
        seed_flag: Option<u64>,
    ) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::base();
        let mut method_set = false;
        for a in file.into_iter().chain(parse_sets(sets)?) {
            method_set |= a.key == "method";
            cfg.apply(&a)?;
        }
        if let Some(seed) = seed_flag {
            cfg.seed = seed;
        }
        if !method_set {
            return Err(Failure::Config(format!(
                "config error: no `method` given (one of {})",
                method_names().join(", ")
            )));
        }
        Ok(cfg)
    }

    /// Applies one assignment, with typed parsing per key.
    fn apply(&mut self, a: &Assignment) -> CliResult<()> {
        let loc = &a.location;
        let v = a.value.as_str();
        match a.key.as_str() {
            "method" => {
                self.method = Method::parse(v).map_err(|_| {
                    config_err(
                        loc,
                        format!("unknown method `{v}` (one of {})", method_names().join(", ")),
                    )
                })?;
            }
            "dataset" => {
                if v != "rotmnist" {
                    return Err(config_err(loc, format!("unknown dataset `{v}` (expected `rotmnist`)")));
                }
                self.dataset = v.to_string();
            }
            "seed" => self.seed = parse_u64(loc, v)?,
            "data_seed" => self.data_seed = parse_u64(loc, v)?,
            "epochs" => self.epochs = parse_count(loc, v)?,
            "steps_per_epoch" => {
                self.steps_per_epoch = if v == "auto" { None } else { Some(parse_count(loc, v)?) };
            }
            "k" => self.k = parse_count(loc, v)?,
            "meta_batch" => self.meta_batch = parse_count(loc, v)?,
            "lr" => {
                self.lr = parse_f64(loc, v)?;
                if !(self.lr > 0.0) {
                    return Err(config_err(loc, format!("`lr` must be positive, got {v}")));
                }
            }
            "alpha" => {
                self.alpha = parse_f64(loc, v)?;
                if self.alpha < 0.0 {
                    return Err(config_err(loc, format!("`alpha` must be non-negative, got {v}")));
                }
            }
            "inner_steps" => self.inner_steps = parse_count(loc, v)?,
            "conv_filters" => self.conv_filters = parse_count(loc, v)?,
            "val_every" => self.val_every = parse_count(loc, v)?,
            "val_points" => self.val_points = parse_count(loc, v)?,
            "test_points" => self.test_points = parse_count(loc, v)?,
            "stream_points" => self.stream_points = parse_count(loc, v)?,
            other => {
                return Err(config_err(
                    loc,
                    format!("unknown key `{other}` (known keys: {})", KNOWN_KEYS.join(", ")),
                ));
            }
        }
        Ok(())
    }

    // ── Canonical form and digest ───────────────────────────────────────

    /// The fixed-order serialization. Float values go through `Display`,
    /// so `1e-4` and `0.0001` in a source file produce one digest.
    fn canonical(&self, include_seed: bool) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "method = {}", self.method.name());
        let _ = writeln!(s, "dataset = {}", self.dataset);
        if include_seed {
            let _ = writeln!(s, "seed = {}", self.seed);
        }
        let _ = writeln!(s, "data_seed = {}", self.data_seed);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        match self.steps_per_epoch {
            Some(n) => {
                let _ = writeln!(s, "steps_per_epoch = {n}");
            }
            None => {
                let _ = writeln!(s, "steps_per_epoch = auto");
            }
        }
        let _ = writeln!(s, "k = {}", self.k);
        let _ = writeln!(s, "meta_batch = {}", self.meta_batch);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "inner_steps = {}", self.inner_steps);
        let _ = writeln!(s, "conv_filters = {}", self.conv_filters);
        let _ = writeln!(s, "val_every = {}", self.val_every);
        let _ = writeln!(s, "val_points = {}", self.val_points);
        let _ = writeln!(s, "test_points = {}", self.test_points);
        let _ = writeln!(s, "stream_points = {}", self.stream_points);
        s
    }

    /// First twelve hex characters of the seed-independent content hash.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical(false).as_bytes());
        let hex: String = hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        hex[..DIGEST_LEN].to_string()
    }

    /// Run-directory name: `<method>-<digest>-s<seed>`.
    pub fn run_name(&self) -> String {
        format!("{}-{}-s{}", self.method.name(), self.digest(), self.seed)
    }

    /// The text written to `config.resolved.cfg`.
    pub fn resolved_text(&self) -> String {
        format!(
            "# resolved configuration (digest {})\n{}",
            self.digest(),
            self.canonical(true)
        )
    }
}

fn method_names() -> Vec<&'static str> {
    Method::ALL.iter().map(|m| m.name()).collect()
}

// ── Typed value parsers ─────────────────────────────────────────────────

fn parse_u64(loc: &str, v: &str) -> CliResult<u64> {
    v.parse::<u64>()
        .map_err(|_| config_err(loc, format!("expected a non-negative integer, got `{v}`")))
}

fn parse_count(loc: &str, v: &str) -> CliResult<usize> {
    let n = v
        .parse::<usize>()
        .map_err(|_| config_err(loc, format!("expected a positive integer, got `{v}`")))?;
    if n == 0 {
        return Err(config_err(loc, "expected a positive integer, got `0`"));
    }
    Ok(n)
}

fn parse_f64(loc: &str, v: &str) -> CliResult<f64> {
    let x = v
        .parse::<f64>()
        .map_err(|_| config_err(loc, format!("expected a number, got `{v}`")))?;
    if !x.is_finite() {
        return Err(config_err(loc, format!("expected a finite number, got `{v}`")));
    }
    Ok(x)
}

// ── Tests ───────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    fn load_text(text: &str, sets: &[&str], seed: Option<u64>) -> CliResult<RunConfig> {
        let sets: Vec<String> = sets.iter().map(|s| s.to_string()).collect();
        RunConfig::from_parts(parse_file(text, "test.cfg")?, &sets, seed)
    }

    #[test]
    fn defaults_fill_in_around_the_method() {
        let cfg = load_text("method = arm-cml\n", &[], None).unwrap();
        assert_eq!(cfg.method, Method::ArmCml);
        assert_eq!(cfg.epochs, 25);
        assert_eq!(cfg.k, 50);
        assert_eq!(cfg.meta_batch, 6);
        assert_eq!(cfg.lr, 1e-4);
        assert_eq!(cfg.steps_per_epoch, None);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = load_text(
            "# a full-line comment\n\nmethod = erm  # trailing comment\nepochs = 3\n",
            &[],
            None,
        )
        .unwrap();
        assert_eq!(cfg.method, Method::Erm);
        assert_eq!(cfg.epochs, 3);
    }

    #[test]
    fn missing_method_is_rejected() {
        let err = load_text("epochs = 3\n", &[], None).unwrap_err();
        assert!(matches!(err, Failure::Config(ref m) if m.contains("method")));
    }

    #[test]
    fn unknown_keys_carry_their_line_number() {
        let err = load_text("method = erm\nepoch = 3\n", &[], None).unwrap_err();
        let Failure::Config(msg) = err else { panic!("wrong class") };
        assert!(msg.contains("test.cfg:2"), "{msg}");
        assert!(msg.contains("unknown key `epoch`"), "{msg}");
    }

    #[test]
    fn bad_values_carry_their_line_number() {
        let err = load_text("method = erm\nepochs = many\n", &[], None).unwrap_err();
        let Failure::Config(msg) = err else { panic!("wrong class") };
        assert!(msg.contains("test.cfg:2"), "{msg}");
        assert!(msg.contains("`many`"), "{msg}");
    }

    #[test]
    fn zero_counts_are_rejected() {
        let err = load_text("method = erm\nk = 0\n", &[], None).unwrap_err();
        assert!(matches!(err, Failure::Config(_)));
    }

    #[test]
    fn duplicate_file_keys_are_rejected() {
        let err = load_text("method = erm\nmethod = uw\n", &[], None).unwrap_err();
        let Failure::Config(msg) = err else { panic!("wrong class") };
        assert!(msg.contains("already set"), "{msg}");
    }

    #[test]
    fn set_flags_override_the_file() {
        let cfg = load_text("method = erm\nepochs = 3\n", &["epochs=7", "method=uw"], None).unwrap();
        assert_eq!(cfg.method, Method::Uw);
        assert_eq!(cfg.epochs, 7);
    }

    #[test]
    fn seed_flag_wins_over_everything() {
        let cfg = load_text("method = erm\nseed = 1\n", &["seed=2"], Some(3)).unwrap();
        assert_eq!(cfg.seed, 3);
    }

    #[test]
    fn digest_ignores_seed_but_nothing_else() {
        let a = load_text("method = arm-cml\n", &[], Some(0)).unwrap();
        let b = load_text("method = arm-cml\n", &[], Some(1)).unwrap();
        let c = load_text("method = arm-cml\nepochs = 26\n", &[], Some(0)).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        assert_eq!(a.digest().len(), DIGEST_LEN);
    }

    #[test]
    fn digest_is_spelling_independent() {
        let a = load_text("method = arm-cml\nlr = 1e-4\n", &[], None).unwrap();
        let b = load_text("method = arm-cml\nlr = 0.0001\n", &[], None).unwrap();
        assert_eq!(a.digest(), b.digest());
    }

    #[test]
    fn resolved_text_round_trips() {
        let cfg = load_text(
            "method = arm-ll\nepochs = 13\nsteps_per_epoch = 9\nlr = 3e-4\n",
            &[],
            Some(2),
        )
        .unwrap();
        let text = cfg.resolved_text();
        let back = load_text(&text, &[], None).unwrap();
        assert_eq!(back, cfg);
    }
}
