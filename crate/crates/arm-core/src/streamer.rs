//! Incremental test-time adaptation for the streaming setting.
//!
//! Test points arrive one at a time. The state keeps a counter `t` and a
//! fixed-size payload — a running context average (contextual methods) or
//! per-normalization-layer running moments (moment-swap methods) — and
//! never retains an input. The protocol is update-then-predict: fold the
//! new point into the payload, then score it with the updated payload.
//!
//! Streamed moments deserve a caveat: a point's deeper activations are
//! computed under the statistics available *when it arrives*, so layers
//! past the first converge to — rather than exactly equal — the batch
//! moments as `t` grows. The running context is exact at any `t` up to
//! summation order, because per-point contexts never depend on the
//! payload. Learned-loss methods have no streaming rule here.

use crate::arm::{argmax_rows, Method, ModelBundle, Prediction};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::nn::{apply_layer, forward, BnBuffers, BnMode, BoundParams, Layer};
use crate::tensor::Tensor;

// ── State ───────────────────────────────────────────────────────────────

/// The constant-size adaptation payload.
#[derive(Debug, Clone)]
enum Payload {
    /// Running average of per-point contexts, shape `(1, D, spatial…)`.
    Context(Tensor<f32>),
    /// Running per-layer activation moments, seeded from the training
    /// running statistics (so a prediction at `t = 0` is the ordinary
    /// fixed-statistics forward pass).
    Moments(BnBuffers<f32>),
}

/// Streaming adaptation state: a point counter plus the payload.
#[derive(Debug, Clone)]
pub struct StreamState {
    t: u64,
    payload: Payload,
}

impl StreamState {
    /// Initial state for the bundle's method. Methods without a streaming
    /// rule (no adaptation, or learned-loss adaptation) are rejected.
    pub fn new(bundle: &ModelBundle) -> Result<StreamState> {
        let payload = match bundle.method {
            Method::ArmCml | Method::CmlAblation => {
                let ctx = bundle.ctx.as_ref().expect("validated at assembly");
                let (_, out) = ctx.shapes(1)?;
                Payload::Context(Tensor::zeros(&out))
            }
            Method::ArmBn | Method::BnAdapt => Payload::Moments(bundle.buffers.clone()),
            other => {
                return Err(Error::Contract(format!(
                    "method `{}` has no streaming adaptation rule",
                    other.name()
                )))
            }
        };
        Ok(StreamState { t: 0, payload })
    }

    /// Points observed so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    /// The running context, if this is a contextual stream.
    pub fn context(&self) -> Option<&Tensor<f32>> {
        match &self.payload {
            Payload::Context(c) => Some(c),
            Payload::Moments(_) => None,
        }
    }

    /// The running moments, if this is a moment stream.
    pub fn moments(&self) -> Option<&BnBuffers<f32>> {
        match &self.payload {
            Payload::Moments(b) => Some(b),
            Payload::Context(_) => None,
        }
    }

    /// Payload size in scalars — constant in `t` by construction; tests
    /// assert this to pin the no-input-retention contract.
    pub fn payload_scalars(&self) -> usize {
        match &self.payload {
            Payload::Context(c) => c.numel(),
            Payload::Moments(b) => b.total_scalars(),
        }
    }

    /// Folds a batch of `n ≥ 1` points into the payload; `t` advances by
    /// `n`. Streaming means calling this with one point at a time, but the
    /// arithmetic is count-weighted, so seeding from a warm-up batch works
    /// the same way.
    pub fn observe(&mut self, bundle: &ModelBundle, x: &Tensor<f32>) -> Result<()> {
        check_examples(bundle, x)?;
        let n = x.shape()[0];
        match &mut self.payload {
            Payload::Context(c) => {
                let fresh = mean_context(bundle, x)?;
                // c′ = (t·c + n·mean)/(t + n), accumulated in f64 so long
                // streams cannot drift.
                let t = self.t as f64;
                let n = n as f64;
                for (cur, new) in c.data_mut().iter_mut().zip(fresh.data()) {
                    *cur = ((t * *cur as f64 + n * *new as f64) / (t + n)) as f32;
                }
            }
            Payload::Moments(buffers) => {
                observe_moments(bundle, buffers, x, self.t)?;
            }
        }
        self.t += n as u64;
        Ok(())
    }

    /// Scores `x` with the current payload (no update).
    pub fn predict(&self, bundle: &ModelBundle, x: &Tensor<f32>) -> Result<Prediction> {
        check_examples(bundle, x)?;
        let mut g = Graph::<f32>::new();
        let bound = BoundParams::bind(&mut g, &bundle.params);
        let xn = g.constant(x.clone());
        let mut context = None;
        let logits = match &self.payload {
            Payload::Context(c) => {
                context = Some(c.clone());
                let cn = g.constant(c.clone());
                let mut target = c.shape().to_vec();
                target[0] = x.shape()[0];
                let spread = g.broadcast_to(cn, &target)?;
                let combined = g.concat_ch(xn, spread)?;
                let mut mode = BnMode::EvalRunning(&bundle.buffers);
                forward(&mut g, &bundle.pred, &bound, &mut mode, combined)?
            }
            Payload::Moments(buffers) => {
                let mut mode = BnMode::EvalRunning(buffers);
                forward(&mut g, &bundle.pred, &bound, &mut mode, xn)?
            }
        };
        let logits = g.value(logits).clone();
        Ok(Prediction {
            argmax: argmax_rows(&logits)?,
            context,
            logits,
        })
    }

    /// The streaming protocol for one arriving point (or small batch):
    /// fold it into the payload, then score it with the updated payload.
    pub fn observe_then_predict(
        &mut self,
        bundle: &ModelBundle,
        x: &Tensor<f32>,
    ) -> Result<Prediction> {
        self.observe(bundle, x)?;
        self.predict(bundle, x)
    }
}

fn check_examples(bundle: &ModelBundle, x: &Tensor<f32>) -> Result<()> {
    if x.rank() < 2 || x.shape()[0] == 0 {
        return Err(Error::shape(
            "stream",
            format!("need a nonempty example-major batch, got {:?}", x.shape()),
        ));
    }
    let per_example = match bundle.method {
        Method::ArmCml | Method::CmlAblation => {
            let ctx = bundle.ctx.as_ref().expect("validated at assembly");
            ctx.input_shape.clone()
        }
        _ => bundle.pred.input_shape.clone(),
    };
    if x.shape()[1..] != per_example[..] {
        return Err(Error::shape(
            "stream",
            format!("example shape {:?} does not match {per_example:?}", &x.shape()[1..]),
        ));
    }
    Ok(())
}

/// Mean per-point context of a batch, shape `(1, D, spatial…)`, computed
/// with the training statistics — per-point contexts are independent of
/// both the stream and each other.
fn mean_context(bundle: &ModelBundle, x: &Tensor<f32>) -> Result<Tensor<f32>> {
    let ctx = bundle.ctx.as_ref().expect("checked by StreamState::new");
    let mut g = Graph::<f32>::new();
    let bound = BoundParams::bind(&mut g, &bundle.params);
    let xn = g.constant(x.clone());
    let mut mode = BnMode::EvalRunning(&bundle.buffers);
    let per_point = forward(&mut g, ctx, &bound, &mut mode, xn)?;
    let mean = g.mean_axes(per_point, &[0], true)?;
    Ok(g.value(mean).clone())
}

/// Walks the prediction network once with the new points, updating each
/// normalization layer's running moments from its (pre-normalization)
/// activations and normalizing with the freshly updated statistics before
/// moving deeper.
fn observe_moments(
    bundle: &ModelBundle,
    buffers: &mut BnBuffers<f32>,
    x: &Tensor<f32>,
    t: u64,
) -> Result<()> {
    let mut g = Graph::<f32>::new();
    let bound = BoundParams::bind(&mut g, &bundle.params);
    let mut cur = g.constant(x.clone());
    for layer in &bundle.pred.layers {
        if let Layer::BatchNorm { name } = layer {
            let v = g.value(cur);
            let (h, sums, sumsqs) = channel_sums(v)?;
            let n = v.shape()[0] as u64;
            let stats = buffers.get_mut(name)?;
            for ch in 0..sums.len() {
                let mu = stats.mean.data()[ch] as f64;
                let var = stats.var.data()[ch] as f64;
                // Count-weighted moment fold: old mass h·t, new mass h·n.
                let old_mass = (h as u64 * t) as f64;
                let new_mass = (h as u64 * n as u64) as f64;
                let total = old_mass + new_mass;
                let mean_new = (old_mass * mu + sums[ch]) / total;
                let second = (old_mass * (var + mu * mu) + sumsqs[ch]) / total;
                let mut var_new = second - mean_new * mean_new;
                if var_new < 0.0 {
                    if var_new < -1e-6 {
                        return Err(Error::NegativeVariance {
                            value: var_new,
                            t,
                        });
                    }
                    var_new = 0.0;
                }
                stats.mean.data_mut()[ch] = mean_new as f32;
                stats.var.data_mut()[ch] = var_new as f32;
            }
        }
        let mut mode = BnMode::EvalRunning(buffers);
        cur = apply_layer(&mut g, layer, &bound, &bundle.pred.bn, &mut mode, cur)?;
    }
    Ok(())
}

/// Per-channel `(values per point, Σa, Σa²)` over an example-major
/// activation tensor, accumulated in f64.
fn channel_sums(v: &Tensor<f32>) -> Result<(usize, Vec<f64>, Vec<f64>)> {
    let shape = v.shape();
    if shape.len() < 2 {
        return Err(Error::shape(
            "channel_sums",
            format!("rank >= 2 required, got {shape:?}"),
        ));
    }
    let (n, c) = (shape[0], shape[1]);
    let spatial: usize = shape[2..].iter().product();
    let mut sums = vec![0.0f64; c];
    let mut sumsqs = vec![0.0f64; c];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * spatial;
            for &val in &v.data()[base..base + spatial] {
                let val = val as f64;
                sums[ch] += val;
                sumsqs[ch] += val * val;
            }
        }
    }
    Ok((spatial, sums, sumsqs))
}
