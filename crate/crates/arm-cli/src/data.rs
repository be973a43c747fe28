//! Dataset housekeeping: locating, verifying, and (as a fallback)
//! fetching the four handwritten-digit IDX files.
//!
//! Every byte that training touches is pinned by SHA-256, so two
//! machines that pass `prepare-data` run on identical data. The fetch
//! path shells out to `npm pack` (the files ride inside the `mnist-data`
//! package) and `tar`; a pre-populated `--source` directory or an
//! already-filled data root skips the network entirely.

use std::fs::{self, File};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::Command;

use anyhow::Context;
use arm_core::data::{idx, ImagePool};
use sha2::{Digest, Sha256};

use crate::{CliResult, DataArgs, Failure};

// ── Pinned contents ─────────────────────────────────────────────────────

/// The four IDX files and their SHA-256 digests (the classic 60000/10000
/// split, uncompressed).
pub const FILES: [(&str, &str); 4] = [
    (
        "train-images-idx3-ubyte",
        "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
    ),
    (
        "train-labels-idx1-ubyte",
        "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
    ),
    (
        "t10k-images-idx3-ubyte",
        "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
    ),
    (
        "t10k-labels-idx1-ubyte",
        "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
    ),
];

/// npm package (and version) that carries the uncompressed IDX files.
const NPM_PACKAGE: &str = "mnist-data@1.2.6";

// ── Root resolution ─────────────────────────────────────────────────────

/// Flag beats `$ARM_DATA_ROOT` beats `data/mnist`.
pub fn resolve_root(flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Ok(env) = std::env::var("ARM_DATA_ROOT") {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    PathBuf::from("data/mnist")
}

/// Errors with a pointer to `prepare-data` when any file is missing.
fn require_files(root: &Path) -> CliResult<()> {
    for (name, _) in FILES {
        if !root.join(name).is_file() {
            return Err(Failure::Runtime(anyhow::anyhow!(
                "data file `{}` is missing; run `arm prepare-data` first",
                root.join(name).display()
            )));
        }
    }
    Ok(())
}

// ── Loading ─────────────────────────────────────────────────────────────

/// The 60000-image training source pool.
pub fn load_train_pool(root: &Path) -> CliResult<ImagePool> {
    require_files(root)?;
    Ok(idx::load_pool(
        &root.join("train-images-idx3-ubyte"),
        &root.join("train-labels-idx1-ubyte"),
    )?)
}

/// The 10000-image test source pool.
pub fn load_test_pool(root: &Path) -> CliResult<ImagePool> {
    require_files(root)?;
    Ok(idx::load_pool(
        &root.join("t10k-images-idx3-ubyte"),
        &root.join("t10k-labels-idx1-ubyte"),
    )?)
}

// ── prepare-data ────────────────────────────────────────────────────────

pub fn prepare(args: &DataArgs) -> CliResult<()> {
    let root = resolve_root(args.data_root.as_deref());
    fs::create_dir_all(&root).with_context(|| format!("creating `{}`", root.display()))?;

    let missing: Vec<&str> = FILES
        .iter()
        .filter(|(name, _)| !root.join(name).is_file())
        .map(|(name, _)| *name)
        .collect();

    if !missing.is_empty() {
        if let Some(source) = &args.source {
            for name in &missing {
                let from = source.join(name);
                let to = root.join(name);
                fs::copy(&from, &to).with_context(|| {
                    format!("copying `{}` to `{}`", from.display(), to.display())
                })?;
                println!("copied {name} from {}", source.display());
            }
        } else if args.fetch {
            fetch_via_npm(&root, &missing)?;
        } else {
            return Err(Failure::Runtime(anyhow::anyhow!(
                "{} of 4 data files missing under `{}`; pass --source DIR or --fetch",
                missing.len(),
                root.display()
            )));
        }
    }

    // Hash everything, present or fresh — the manifest only ever records
    // verified bytes.
    let mut entries = Vec::new();
    for (name, want) in FILES {
        let path = root.join(name);
        let (got, bytes) = sha256_file(&path)?;
        if got != want {
            return Err(Failure::Verification(format!(
                "`{}` has SHA-256 {got}, expected {want}; delete it and re-run prepare-data",
                path.display()
            )));
        }
        println!("verified {name}  ({bytes} bytes, sha256 {}…)", &got[..12]);
        entries.push((name, got, bytes));
    }

    let manifest: serde_json::Value = serde_json::json!({
        "files": entries
            .iter()
            .map(|(name, sha, bytes)| {
                (name.to_string(), serde_json::json!({ "sha256": sha, "bytes": bytes }))
            })
            .collect::<serde_json::Map<_, _>>(),
    });
    let manifest_path = root.join("manifest.json");
    fs::write(&manifest_path, format!("{:#}\n", manifest))
        .with_context(|| format!("writing `{}`", manifest_path.display()))?;
    println!("wrote {}", manifest_path.display());
    Ok(())
}

fn sha256_file(path: &Path) -> CliResult<(String, u64)> {
    let mut file =
        File::open(path).with_context(|| format!("opening `{}`", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    let mut total = 0u64;
    loop {
        let n = file
            .read(&mut buf)
            .with_context(|| format!("reading `{}`", path.display()))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    let hex: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok((hex, total))
}

/// Downloads the npm package into a scratch directory, unpacks it, and
/// copies the requested files into the data root.
fn fetch_via_npm(root: &Path, names: &[&str]) -> CliResult<()> {
    let scratch = std::env::temp_dir().join(format!("arm-fetch-{}", std::process::id()));
    fs::create_dir_all(&scratch)
        .with_context(|| format!("creating `{}`", scratch.display()))?;
    let result = (|| -> CliResult<()> {
        println!("fetching {NPM_PACKAGE} via npm…");
        let pack = Command::new("npm")
            .args(["pack", NPM_PACKAGE, "--silent"])
            .current_dir(&scratch)
            .output()
            .context("running `npm pack` (is npm installed?)")?;
        if !pack.status.success() {
            return Err(Failure::Runtime(anyhow::anyhow!(
                "`npm pack {NPM_PACKAGE}` failed: {}",
                String::from_utf8_lossy(&pack.stderr).trim()
            )));
        }
        let tarball = String::from_utf8_lossy(&pack.stdout).trim().to_string();
        let unpack = Command::new("tar")
            .args(["-xzf", &tarball])
            .current_dir(&scratch)
            .status()
            .context("running `tar`")?;
        if !unpack.success() {
            return Err(Failure::Runtime(anyhow::anyhow!("unpacking `{tarball}` failed")));
        }
        for name in names {
            let from = scratch.join("package").join("data").join(name);
            let to = root.join(name);
            fs::copy(&from, &to).with_context(|| {
                format!("copying `{}` to `{}`", from.display(), to.display())
            })?;
            println!("fetched {name}");
        }
        Ok(())
    })();
    let _ = fs::remove_dir_all(&scratch);
    result
}
