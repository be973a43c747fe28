//! Adaptation methods and model bundles.
//!
//! The three adaptive methods share one shape: an adaptation model `h`
//! consumes an *unlabeled* batch and produces post-adaptation parameters
//! θ′, after which the prediction network `g` scores each input.
//!
//! * **Contextual** (`arm-cml`): a context network embeds each input, the
//!   embeddings are averaged into a context, and every input is scored
//!   with the context concatenated along the channel axis.
//! * **Moment swap** (`arm-bn`): batch-norm layers normalize by the test
//!   batch's own moments instead of the stored running ones. `h` adds no
//!   parameters.
//! * **Learned loss** (`arm-ll`): a small network maps logits to a scalar
//!   per example; θ′ takes gradient steps on the ℓ2 norm of those scalars.
//!   The inner gradient is recorded on the tape, so training
//!   differentiates through the update (full second order).
//!
//! All adaptation here is label-free by construction: none of these
//! functions accept labels, so θ′ can only depend on (θ, φ, x₁..x_K).

pub mod train;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::kernels::gemm::Gemm;
use crate::nn::{
    build_architecture, forward, ArchConfig, ArchKind, BnBuffers, BnMode, BoundParams, Layer,
    Network, ParamSet, Partition,
};
use crate::rng;
use crate::tensor::{Scalar, Tensor};

// ── Methods ─────────────────────────────────────────────────────────────

/// Training/adaptation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Contextual adaptation, meta-trained on single-domain episodes.
    ArmCml,
    /// Batch-norm moment swap, meta-trained on single-domain episodes.
    ArmBn,
    /// Learned-loss inner updates, meta-trained on single-domain episodes.
    ArmLl,
    /// Plain empirical risk minimization; no adaptation.
    Erm,
    /// ERM with domains sampled uniformly (upweights rare domains).
    Uw,
    /// ERM training, moment-swap adaptation at test time only.
    BnAdapt,
    /// Contextual model trained on uniformly mixed batches (no domain
    /// structure during training).
    CmlAblation,
    /// Learned-loss model trained on uniformly mixed batches.
    LlAblation,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::ArmCml,
        Method::ArmBn,
        Method::ArmLl,
        Method::Erm,
        Method::Uw,
        Method::BnAdapt,
        Method::CmlAblation,
        Method::LlAblation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::ArmCml => "arm-cml",
            Method::ArmBn => "arm-bn",
            Method::ArmLl => "arm-ll",
            Method::Erm => "erm",
            Method::Uw => "uw",
            Method::BnAdapt => "bn-adapt",
            Method::CmlAblation => "cml-ablation",
            Method::LlAblation => "ll-ablation",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method `{s}`; expected one of {}",
                    Method::ALL.map(Method::name).join(", ")
                ))
            })
    }

    /// Trains on single-domain episodes (the meta-learning loop).
    pub fn is_episodic(self) -> bool {
        matches!(self, Method::ArmCml | Method::ArmBn | Method::ArmLl)
    }

    /// Carries a context network.
    pub fn uses_context(self) -> bool {
        matches!(self, Method::ArmCml | Method::CmlAblation)
    }

    /// Carries a learned-loss network.
    pub fn uses_loss_net(self) -> bool {
        matches!(self, Method::ArmLl | Method::LlAblation)
    }

    /// Swaps batch-norm moments at test time.
    pub fn swaps_bn_moments(self) -> bool {
        matches!(self, Method::ArmBn | Method::BnAdapt)
    }

    /// Adapts at test time at all.
    pub fn adapts_at_test(self) -> bool {
        !matches!(self, Method::Erm | Method::Uw)
    }
}

/// Inner-update settings for the learned-loss methods (also consulted at
/// test time — `h` is the same function in both phases).
#[derive(Debug, Clone, Copy)]
pub struct AdaptSettings {
    pub alpha: f64,
    pub steps: usize,
}

impl Default for AdaptSettings {
    fn default() -> Self {
        AdaptSettings {
            alpha: 0.1,
            steps: 1,
        }
    }
}

// ── Batch-norm phase ────────────────────────────────────────────────────

/// Which statistics the batch-norm layers use for a whole forward pass.
pub enum Phase<'a, F: Scalar> {
    /// Batch moments, folded into the running buffers (training).
    Train(&'a mut BnBuffers<F>),
    /// Stored statistics, read-only (standard evaluation, and the inner
    /// forward of learned-loss adaptation at test time).
    Running(&'a BnBuffers<F>),
    /// Batch moments, buffers untouched (moment-swap adaptation; also
    /// used by gradient checks because it is side-effect-free).
    Batch,
}

impl<'a, F: Scalar> Phase<'a, F> {
    /// Reborrows as the [`BnMode`] for one network application.
    pub fn mode(&mut self) -> BnMode<'_, F> {
        match self {
            Phase::Train(b) => BnMode::TrainBatch(b),
            Phase::Running(b) => BnMode::EvalRunning(b),
            Phase::Batch => BnMode::EvalBatch,
        }
    }
}

// ── Model bundles ───────────────────────────────────────────────────────

/// A method's networks plus their (shared) parameters and running buffers.
/// Parameter names are prefixed per network (`pred.`, `ctx.`, `lossnet.`),
/// so one flat [`ParamSet`] serves the whole bundle.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub method: Method,
    pub pred: Network,
    pub ctx: Option<Network>,
    pub lossnet: Option<Network>,
    pub params: ParamSet<f32>,
    pub buffers: BnBuffers<f32>,
    pub num_classes: usize,
}

impl ModelBundle {
    /// Initializes parameters for the given networks and validates that
    /// they fit the method.
    pub fn assemble(
        method: Method,
        pred: Network,
        ctx: Option<Network>,
        lossnet: Option<Network>,
        seed: u64,
    ) -> Result<ModelBundle> {
        let mut params = ParamSet::new();
        let mut buffers = BnBuffers::new();

        // The prediction network is the θ side; context and loss networks
        // are the adaptation model's φ.
        let (pred_params, pred_buffers) =
            pred.init::<f32, _>(Partition::Prediction, &mut rng::stream(seed, "init.pred"))?;
        merge(&mut params, &mut buffers, pred_params, pred_buffers)?;

        if method.uses_context() != ctx.is_some() {
            return Err(Error::Contract(format!(
                "method `{}` {} a context network",
                method.name(),
                if method.uses_context() { "requires" } else { "does not take" }
            )));
        }
        if let Some(c) = &ctx {
            let (p, b) = c.init::<f32, _>(Partition::Adaptation, &mut rng::stream(seed, "init.ctx"))?;
            merge(&mut params, &mut buffers, p, b)?;
            // The prediction network consumes input ⊕ context along the
            // channel axis, so its input channels must equal the sum and
            // all spatial extents must line up.
            let (_, ctx_out) = c.shapes(1)?;
            let compatible = pred.input_shape.len() == c.input_shape.len()
                && pred.input_shape[0] == c.input_shape[0] + ctx_out[1]
                && pred.input_shape[1..] == c.input_shape[1..]
                && ctx_out[2..] == c.input_shape[1..];
            if !compatible {
                return Err(Error::shape(
                    "bundle",
                    format!(
                        "context output {ctx_out:?} over input {:?} does not feed prediction input {:?}",
                        c.input_shape, pred.input_shape
                    ),
                ));
            }
        }

        if method.uses_loss_net() != lossnet.is_some() {
            return Err(Error::Contract(format!(
                "method `{}` {} a loss network",
                method.name(),
                if method.uses_loss_net() { "requires" } else { "does not take" }
            )));
        }
        let (_, pred_out) = pred.shapes(1)?;
        let num_classes = pred_out[1];
        if let Some(l) = &lossnet {
            let (p, b) =
                l.init::<f32, _>(Partition::Adaptation, &mut rng::stream(seed, "init.lossnet"))?;
            merge(&mut params, &mut buffers, p, b)?;
            let (_, l_out) = l.shapes(1)?;
            if l.input_shape != [num_classes] || l_out != [1, 1] {
                return Err(Error::shape(
                    "bundle",
                    format!(
                        "loss network must map ({num_classes},) logits to a scalar, got {:?} -> {:?}",
                        l.input_shape, l_out
                    ),
                ));
            }
        }

        if method.swaps_bn_moments()
            && !pred.layers.iter().any(|l| matches!(l, Layer::BatchNorm { .. }))
        {
            return Err(Error::Contract(format!(
                "method `{}` swaps batch-norm moments but the prediction network has no batch-norm layers",
                method.name()
            )));
        }

        Ok(ModelBundle {
            method,
            pred,
            ctx,
            lossnet,
            params,
            buffers,
            num_classes,
        })
    }

    /// The image-classification bundle: reference conv architectures.
    pub fn for_images(method: Method, cfg: &ArchConfig, seed: u64) -> Result<ModelBundle> {
        let pred_kind = if method.uses_context() {
            ArchKind::PredictionContextual
        } else {
            ArchKind::PredictionFull
        };
        let pred = build_architecture(pred_kind, cfg, "pred.");
        let ctx = method
            .uses_context()
            .then(|| build_architecture(ArchKind::ContextNet, cfg, "ctx."));
        let lossnet = method
            .uses_loss_net()
            .then(|| build_architecture(ArchKind::LossNet, cfg, "lossnet."));
        ModelBundle::assemble(method, pred, ctx, lossnet, seed)
    }

    /// The 1-D synthetic-testbed bundle: small dense networks over a single
    /// input feature, two classes.
    pub fn for_synthetic(method: Method, hidden: usize, ctx_dim: usize, seed: u64) -> Result<ModelBundle> {
        let dense = |name: &str, out| Layer::Dense {
            name: name.to_string(),
            out_dim: out,
        };
        let in_dim = if method.uses_context() { 1 + ctx_dim } else { 1 };
        let pred = Network::new(
            &[in_dim],
            vec![
                dense("pred.fc1", hidden),
                Layer::Relu,
                dense("pred.fc2", hidden),
                Layer::Relu,
                dense("pred.fc3", 2),
            ],
        );
        let ctx = method.uses_context().then(|| {
            Network::new(
                &[1],
                vec![dense("ctx.fc1", hidden), Layer::Relu, dense("ctx.fc2", ctx_dim)],
            )
        });
        let lossnet = method.uses_loss_net().then(|| {
            Network::new(
                &[2],
                vec![dense("lossnet.fc1", 8), Layer::Relu, dense("lossnet.fc2", 1)],
            )
        });
        ModelBundle::assemble(method, pred, ctx, lossnet, seed)
    }

    /// Image bundle at a given width: the reference configuration with
    /// the convolution filter count scaled down (context filters cap at
    /// their reference width of 64).
    pub fn for_images_at_width(method: Method, conv_filters: usize, seed: u64) -> Result<ModelBundle> {
        let cfg = ArchConfig {
            conv_filters,
            context_filters: conv_filters.min(64),
            ..ArchConfig::default()
        };
        ModelBundle::for_images(method, &cfg, seed)
    }
}

fn merge<F: Scalar>(
    params: &mut ParamSet<F>,
    buffers: &mut BnBuffers<F>,
    p: ParamSet<F>,
    b: BnBuffers<F>,
) -> Result<()> {
    for e in p.entries() {
        params.insert(e.name.clone(), e.partition, e.tensor.clone())?;
    }
    for name in b.names() {
        buffers.insert(name.clone(), b.get(name)?.clone());
    }
    Ok(())
}

// ── Adaptation graph builders ───────────────────────────────────────────

/// Contextual forward: per-example contexts, averaged and concatenated.
pub struct CmlForward {
    pub logits: NodeId,
    /// The averaged context, shape `(1, D, spatial...)` — the adaptation
    /// payload the streaming path must reproduce.
    pub context: NodeId,
}

/// Builds the contextual adaptation graph on `x` (an unlabeled batch).
pub fn cml_forward<F: Scalar + Gemm>(
    g: &mut Graph<F>,
    ctx_net: &Network,
    pred_net: &Network,
    bound: &BoundParams,
    phase: &mut Phase<'_, F>,
    x: NodeId,
) -> Result<CmlForward> {
    let per_example = {
        let mut mode = phase.mode();
        forward(g, ctx_net, bound, &mut mode, x)?
    };
    let context = g.mean_axes(per_example, &[0], true)?;
    let mut target = g.shape(context).to_vec();
    target[0] = g.shape(x)[0];
    let spread = g.broadcast_to(context, &target)?;
    let combined = g.concat_ch(x, spread)?;
    let logits = {
        let mut mode = phase.mode();
        forward(g, pred_net, bound, &mut mode, combined)?
    };
    Ok(CmlForward { logits, context })
}

/// Learned-loss adaptation: returns a binding where every prediction-side
/// parameter has been replaced by `θ − α·∇_θ‖v‖₂`, iterated `steps` times.
///
/// With `create_graph = true` the inner gradients stay differentiable, so
/// an outer backward sees the full second-order dependence. In a training
/// phase each inner step also folds batch moments into the running
/// buffers (the inner forward is a training-mode forward).
pub fn ll_adapt<F: Scalar + Gemm>(
    g: &mut Graph<F>,
    pred_net: &Network,
    loss_net: &Network,
    bound: &BoundParams,
    phase: &mut Phase<'_, F>,
    x: NodeId,
    settings: AdaptSettings,
    create_graph: bool,
) -> Result<BoundParams> {
    let mut adapted = bound.clone();
    for _ in 0..settings.steps {
        let logits = {
            let mut mode = phase.mode();
            forward(g, pred_net, &adapted, &mut mode, x)?
        };
        // The loss network is normalization-free; any mode serves.
        let per_example = forward(g, loss_net, &adapted, &mut BnMode::EvalBatch, logits)?;
        let norm = g.l2norm(per_example)?;
        let theta = adapted.of_partition(Partition::Prediction);
        let nodes: Vec<NodeId> = theta.iter().map(|&(_, n)| n).collect();
        let grads = g.backward(norm, &nodes, create_graph)?;
        for (name, node) in theta {
            let grad = grads.require(node)?;
            let delta = g.scale(grad, F::from_f64(settings.alpha))?;
            let updated = g.sub(node, delta)?;
            adapted.set(&name, updated)?;
        }
    }
    Ok(adapted)
}

// ── Test-time prediction ────────────────────────────────────────────────

/// Predictions for one adaptation batch.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub logits: Tensor<f32>,
    pub argmax: Vec<u32>,
    /// The averaged context (contextual methods only), shape
    /// `(1, D, spatial…)` — exposed so the streaming path can be checked
    /// against the batch payload.
    pub context: Option<Tensor<f32>>,
}

/// Row-wise argmax of rank-2 logits; ties resolve to the first maximum.
pub fn argmax_rows<F: Scalar>(logits: &Tensor<F>) -> Result<Vec<u32>> {
    if logits.rank() != 2 {
        return Err(Error::shape(
            "argmax_rows",
            format!("rank-2 logits required, got {:?}", logits.shape()),
        ));
    }
    let c = logits.shape()[1];
    Ok(logits
        .data()
        .chunks_exact(c)
        .map(|row| {
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best as u32
        })
        .collect())
}

/// Adapts to the unlabeled batch `x` with the bundle's method and scores
/// every example. This is the batch test-time path; the streaming variant
/// lives in the streamer module.
pub fn predict_adapted(
    bundle: &ModelBundle,
    settings: AdaptSettings,
    x: &Tensor<f32>,
) -> Result<Prediction> {
    let mut g = Graph::<f32>::new();
    let bound = BoundParams::bind(&mut g, &bundle.params);
    let xn = g.constant(x.clone());
    let mut context = None;
    let logits = match bundle.method {
        Method::Erm | Method::Uw => {
            let mut mode = BnMode::EvalRunning(&bundle.buffers);
            forward(&mut g, &bundle.pred, &bound, &mut mode, xn)?
        }
        Method::ArmCml | Method::CmlAblation => {
            let ctx_net = bundle.ctx.as_ref().expect("validated at assembly");
            let mut phase = Phase::Running(&bundle.buffers);
            let out = cml_forward(&mut g, ctx_net, &bundle.pred, &bound, &mut phase, xn)?;
            context = Some(g.value(out.context).clone());
            out.logits
        }
        Method::ArmBn | Method::BnAdapt => {
            let mut mode = BnMode::EvalBatch;
            forward(&mut g, &bundle.pred, &bound, &mut mode, xn)?
        }
        Method::ArmLl | Method::LlAblation => {
            let loss_net = bundle.lossnet.as_ref().expect("validated at assembly");
            let mut phase = Phase::Running(&bundle.buffers);
            let adapted = ll_adapt(
                &mut g,
                &bundle.pred,
                loss_net,
                &bound,
                &mut phase,
                xn,
                settings,
                false,
            )?;
            let mut mode = phase.mode();
            forward(&mut g, &bundle.pred, &adapted, &mut mode, xn)?
        }
    };
    let logits_t = g.value(logits).clone();
    let argmax = argmax_rows(&logits_t)?;
    Ok(Prediction {
        argmax,
        context,
        logits: logits_t,
    })
}
