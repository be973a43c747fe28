//! First-order optimizers over a [`ParamSet`]: Adam and SGD with momentum
//! and decoupled weight decay.
//!
//! Steps take gradients as a slice of tensors aligned with the parameter
//! order; a missing or mis-shaped gradient is an error rather than a skip,
//! because a silently unused parameter is almost always a wiring bug.
//! Update arithmetic runs in `f64` regardless of the parameter dtype.

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::tensor::{Scalar, Tensor};

// ── Adam ────────────────────────────────────────────────────────────────

/// Adam hyperparameters. Defaults are the reference training settings.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moment estimates, aligned with a parameter set's order.
#[derive(Debug, Clone)]
pub struct AdamState<F: Scalar> {
    pub t: u64,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(params: &ParamSet<F>) -> Self {
        let zeros: Vec<Tensor<F>> = params
            .entries()
            .iter()
            .map(|e| Tensor::zeros(e.tensor.shape()))
            .collect();
        AdamState {
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One Adam update: `w -= lr * m̂ / (√v̂ + eps)` with bias-corrected moments.
pub fn adam_step<F: Scalar>(
    cfg: &AdamConfig,
    state: &mut AdamState<F>,
    params: &mut ParamSet<F>,
    grads: &[Tensor<F>],
) -> Result<()> {
    check_aligned(params, grads, state.m.len())?;
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for ((entry, grad), (m, v)) in params
        .entries_mut()
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let w = entry.tensor.data_mut();
        let ms = m.data_mut();
        let vs = v.data_mut();
        for (((w, &g), m), v) in w.iter_mut().zip(grad.data()).zip(ms).zip(vs) {
            let g = g.as_f64();
            let mf = cfg.beta1 * m.as_f64() + (1.0 - cfg.beta1) * g;
            let vf = cfg.beta2 * v.as_f64() + (1.0 - cfg.beta2) * g * g;
            *m = F::from_f64(mf);
            *v = F::from_f64(vf);
            let step = cfg.lr * (mf / bc1) / ((vf / bc2).sqrt() + cfg.eps);
            *w = F::from_f64(w.as_f64() - step);
        }
    }
    Ok(())
}

// ── SGD with momentum ───────────────────────────────────────────────────

/// SGD hyperparameters. Weight decay is added to the gradient before the
/// momentum update (`g += wd·w`), i.e. classic ℓ2 regularization applied
/// at the optimizer rather than in the loss.
#[derive(Debug, Clone, Copy)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 1e-2,
            momentum: 0.9,
            weight_decay: 0.0,
        }
    }
}

/// Momentum buffers, aligned with a parameter set's order.
#[derive(Debug, Clone)]
pub struct SgdState<F: Scalar> {
    pub velocity: Vec<Tensor<F>>,
}

impl<F: Scalar> SgdState<F> {
    pub fn new(params: &ParamSet<F>) -> Self {
        SgdState {
            velocity: params
                .entries()
                .iter()
                .map(|e| Tensor::zeros(e.tensor.shape()))
                .collect(),
        }
    }
}

/// One SGD update: `vel = μ·vel + (g + wd·w); w -= lr·vel`.
pub fn sgd_step<F: Scalar>(
    cfg: &SgdConfig,
    state: &mut SgdState<F>,
    params: &mut ParamSet<F>,
    grads: &[Tensor<F>],
) -> Result<()> {
    check_aligned(params, grads, state.velocity.len())?;
    for ((entry, grad), vel) in params
        .entries_mut()
        .iter_mut()
        .zip(grads)
        .zip(state.velocity.iter_mut())
    {
        let w = entry.tensor.data_mut();
        let vs = vel.data_mut();
        for ((w, &g), v) in w.iter_mut().zip(grad.data()).zip(vs) {
            let g = g.as_f64() + cfg.weight_decay * w.as_f64();
            let vf = cfg.momentum * v.as_f64() + g;
            *v = F::from_f64(vf);
            *w = F::from_f64(w.as_f64() - cfg.lr * vf);
        }
    }
    Ok(())
}

// ── Shared plumbing ─────────────────────────────────────────────────────

/// Serializable optimizer state for checkpoints.
#[derive(Debug, Clone)]
pub enum OptState<F: Scalar> {
    Adam(AdamState<F>),
    Sgd(SgdState<F>),
}

fn check_aligned<F: Scalar>(params: &ParamSet<F>, grads: &[Tensor<F>], state_len: usize) -> Result<()> {
    if grads.len() != params.len() || state_len != params.len() {
        return Err(Error::Contract(format!(
            "optimizer alignment: {} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state_len
        )));
    }
    for (e, g) in params.entries().iter().zip(grads) {
        if e.tensor.shape() != g.shape() {
            return Err(Error::shape(
                "optimizer_step",
                format!(
                    "gradient for `{}` has shape {:?}, parameter has {:?}",
                    e.name,
                    g.shape(),
                    e.tensor.shape()
                ),
            ));
        }
    }
    Ok(())
}
