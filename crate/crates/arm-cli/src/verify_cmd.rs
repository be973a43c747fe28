//! The `verify` subcommand: check framework invariants and report every
//! residual, exiting nonzero if any check breaches its tolerance.
//!
//! Three sections, all data-free:
//!
//! * `grad` — every autodiff primitive against 64-bit central
//!   differences, across several seeds;
//! * `meta` — the meta-gradient through one learned-loss inner step,
//!   which exercises the second-order path end to end;
//! * `stream` — one-at-a-time streaming adaptation against all-at-once
//!   batch adaptation on noise input, for both streaming methods.
//!
//! The streaming check reports an expected asymmetry: the contextual
//! method's running mean reproduces batch payloads to float precision,
//! while normalization-statistics streaming drifts at deeper layers
//! (each point is normalized with the moments available when it
//! arrived, so later layers see slightly different inputs than one
//! joint pass would produce). The payload line for `arm-bn` therefore
//! fails the shared tolerance by design of the streaming rule; argmax
//! agreement is the operative measure of its fidelity.

use rand::Rng;

use arm_core::arm::{Method, ModelBundle};
use arm_core::rng;
use arm_core::tensor::Tensor;
use arm_core::verify::{
    gradient_checks, meta_gradient_check, stream_batch_divergence, META_GRADIENT_TOL,
    PRIMITIVE_TOL,
};

use crate::{CliResult, Failure, Section, VerifyArgs};

/// Streamed payloads should match batch adaptation to this tolerance.
const STREAM_PAYLOAD_TOL: f64 = 1e-4;
/// Streamed and batch predictions should agree on at least this fraction
/// of points.
const STREAM_AGREEMENT_MIN: f64 = 0.99;
/// Points per streaming check.
const STREAM_POINTS: usize = 50;

pub fn run(args: &VerifyArgs) -> CliResult<()> {
    if args.seeds == 0 {
        return Err(Failure::Config("--seeds must be at least 1".to_string()));
    }
    let sections: Vec<Section> = if args.section.is_empty() {
        vec![Section::Grad, Section::Meta, Section::Stream]
    } else {
        args.section.clone()
    };
    let seeds: Vec<u64> = (0..args.seeds as u64).collect();
    let mut breaches: Vec<String> = Vec::new();

    for section in sections {
        match section {
            Section::Grad => grad_section(&seeds, &mut breaches)?,
            Section::Meta => meta_section(&seeds, &mut breaches)?,
            Section::Stream => stream_section(&mut breaches)?,
        }
    }

    if breaches.is_empty() {
        println!("all checks passed");
        Ok(())
    } else {
        Err(Failure::Verification(format!(
            "{} check(s) breached tolerance:\n  {}",
            breaches.len(),
            breaches.join("\n  ")
        )))
    }
}

fn grad_section(seeds: &[u64], breaches: &mut Vec<String>) -> CliResult<()> {
    println!("gradient checks ({} seed(s), 64-bit central differences)", seeds.len());
    let checks = gradient_checks(seeds)?;
    for c in &checks {
        let ok = c.max_rel_err < PRIMITIVE_TOL;
        println!(
            "  {}  {:<24} max rel err {:.2e}",
            verdict(ok),
            c.primitive,
            c.max_rel_err
        );
        if !ok {
            breaches.push(format!(
                "primitive `{}` gradient off by {:.2e} (tolerance {PRIMITIVE_TOL:.0e})",
                c.primitive, c.max_rel_err
            ));
        }
    }
    let worst = checks
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .expect("suite is never empty");
    println!(
        "  worst: {} at {:.2e} (tolerance {PRIMITIVE_TOL:.0e})",
        worst.primitive, worst.max_rel_err
    );
    Ok(())
}

fn meta_section(seeds: &[u64], breaches: &mut Vec<String>) -> CliResult<()> {
    println!("meta-gradient through one learned-loss inner step");
    let err = meta_gradient_check(seeds)?;
    let ok = err < META_GRADIENT_TOL;
    println!("  {}  max rel err {err:.2e} (tolerance {META_GRADIENT_TOL:.0e})", verdict(ok));
    if !ok {
        breaches.push(format!(
            "meta-gradient off by {err:.2e} (tolerance {META_GRADIENT_TOL:.0e})"
        ));
    }
    Ok(())
}

fn stream_section(breaches: &mut Vec<String>) -> CliResult<()> {
    println!(
        "stream/batch agreement ({STREAM_POINTS} noise points, one at a time vs. all at once)"
    );
    for method in [Method::ArmCml, Method::ArmBn] {
        let bundle = ModelBundle::for_images_at_width(method, 8, 0)?;
        let x = noise_images(STREAM_POINTS, 17);
        let d = stream_batch_divergence(&bundle, &x, STREAM_POINTS)?;
        let payload_ok = d.payload_max_diff < STREAM_PAYLOAD_TOL;
        let agree_ok = d.argmax_agreement >= STREAM_AGREEMENT_MIN;
        println!(
            "  {}  {:<8} payload max diff {:.2e} (tolerance {STREAM_PAYLOAD_TOL:.0e})",
            verdict(payload_ok),
            method.name(),
            d.payload_max_diff
        );
        println!(
            "  {}  {:<8} argmax agreement {:.1}% (minimum {:.0}%)",
            verdict(agree_ok),
            method.name(),
            d.argmax_agreement * 100.0,
            STREAM_AGREEMENT_MIN * 100.0
        );
        if !payload_ok {
            breaches.push(format!(
                "{} streamed payload diverges from batch by {:.2e} (tolerance {STREAM_PAYLOAD_TOL:.0e})",
                method.name(),
                d.payload_max_diff
            ));
        }
        if !agree_ok {
            breaches.push(format!(
                "{} streamed predictions agree with batch on only {:.1}% of points",
                method.name(),
                d.argmax_agreement * 100.0
            ));
        }
    }
    Ok(())
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn noise_images(n: usize, seed: u64) -> Tensor<f32> {
    let mut rng = rng::stream(seed, "verify.stream");
    let data: Vec<f32> = (0..n * 28 * 28).map(|_| rng.gen::<f32>()).collect();
    Tensor::from_vec(&[n, 1, 28, 28], data).expect("shape matches data")
}
