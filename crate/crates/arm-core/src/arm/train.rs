//! Training loops: episodic meta-training and the mixed-batch baselines.
//!
//! Episodic methods draw a meta-batch of single-domain groups, run
//! adaptation per group, and average the post-adaptation cross-entropy
//! over every example, so the update differentiates *through* the
//! adaptation. Each group runs on its own graph and the per-group
//! gradients are summed, which is the same update at a sixth of the
//! peak memory. Baselines draw one mixed batch; the ablations adapt
//! over that whole (domain-unstructured) batch as a single group.
//! Either way the gradients are pulled out as plain tensors and the
//! graph is dropped before the optimizer runs.

use crate::arm::{cml_forward, ll_adapt, AdaptSettings, Method, ModelBundle, Phase};
use crate::data::{sample_batch, sample_episode, BatchMode, DomainDataset, Episode, MixedBatch};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::nn::{adam_step, forward, AdamConfig, AdamState, BoundParams};
use crate::rng;
use crate::tensor::Tensor;

// ── Configuration ───────────────────────────────────────────────────────

/// Settings for one training run. The method lives on the bundle; this
/// carries everything else.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Groups per optimizer step (episodic methods). Mixed-batch methods
    /// draw `meta_batch * group_size` examples flat.
    pub meta_batch: usize,
    /// Examples per group — the unlabeled-batch size K the model adapts to.
    pub group_size: usize,
    pub adapt: AdaptSettings,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Run validation every this many epochs (and always on the last).
    pub val_every: usize,
    /// Override for the number of optimizer steps per epoch; defaults to
    /// `ceil(dataset size / (meta_batch * group_size))`.
    pub steps_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 25,
            meta_batch: 6,
            group_size: 50,
            adapt: AdaptSettings::default(),
            adam: AdamConfig::default(),
            seed: 0,
            val_every: 10,
            steps_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, method: Method) -> Result<()> {
        if self.epochs == 0 || self.meta_batch == 0 || self.group_size == 0 {
            return Err(Error::Config(
                "epochs, meta_batch, and group_size must all be at least 1".to_string(),
            ));
        }
        if self.val_every == 0 {
            return Err(Error::Config("val_every must be at least 1".to_string()));
        }
        if method.uses_loss_net() && (self.adapt.steps == 0 || self.adapt.alpha <= 0.0) {
            return Err(Error::Config(format!(
                "method `{}` adapts by inner gradient steps; steps >= 1 and alpha > 0 required",
                method.name()
            )));
        }
        Ok(())
    }
}

/// One epoch's record: mean training loss, and validation accuracies
/// (worst-case over domains, average) when validation ran.
#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val: Option<(f64, f64)>,
}

/// Computes validation metrics `(worst-case accuracy, average accuracy)`
/// for the current model.
pub type ValidateFn<'a> = &'a mut dyn FnMut(&ModelBundle) -> Result<(f64, f64)>;

/// Observes each finished epoch (checkpointing, CSV logging, progress).
pub type EpochHook<'a> = &'a mut dyn FnMut(&EpochLog, &ModelBundle) -> Result<()>;

// ── Training loop ───────────────────────────────────────────────────────

/// Trains the bundle in place and returns the per-epoch log.
///
/// Randomness comes from a stream derived from `(seed, method name)`, so
/// repeated runs are bit-identical and different methods never share a
/// sampling sequence.
pub fn train_arm(
    cfg: &TrainConfig,
    bundle: &mut ModelBundle,
    data: &DomainDataset,
    mut validate: Option<ValidateFn<'_>>,
    mut on_epoch: Option<EpochHook<'_>>,
) -> Result<Vec<EpochLog>> {
    cfg.validate(bundle.method)?;
    if data.num_classes != bundle.num_classes {
        return Err(Error::Contract(format!(
            "dataset has {} classes but the model predicts {}",
            data.num_classes, bundle.num_classes
        )));
    }
    let mut rng = rng::stream(cfg.seed, &format!("train.{}", bundle.method.name()));
    let batch = cfg.meta_batch * cfg.group_size;
    let steps = cfg
        .steps_per_epoch
        .unwrap_or_else(|| data.total_len().div_ceil(batch));
    let mut opt = AdamState::new(&bundle.params);
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut global_step: u64 = 0;

    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0f64;
        for _ in 0..steps {
            loss_sum += train_step(cfg, bundle, data, &mut opt, &mut rng, epoch, global_step)?;
            global_step += 1;
        }
        let mut log = EpochLog {
            epoch,
            mean_loss: loss_sum / steps as f64,
            val: None,
        };
        let due = epoch % cfg.val_every == 0 || epoch + 1 == cfg.epochs;
        if due {
            if let Some(v) = validate.as_mut() {
                log.val = Some(v(bundle)?);
            }
        }
        if let Some(hook) = on_epoch.as_mut() {
            hook(&log, bundle)?;
        }
        logs.push(log);
    }
    Ok(logs)
}

/// One step's training data: a domain-structured meta-batch or one flat
/// mixed batch.
enum StepBatch {
    Episode(Episode),
    Mixed(MixedBatch),
}

impl StepBatch {
    /// Domains present, for divergence diagnostics.
    fn domains(&self) -> Vec<usize> {
        match self {
            StepBatch::Episode(e) => e.groups.iter().map(|grp| grp.domain).collect(),
            StepBatch::Mixed(b) => {
                let mut d = b.domains.clone();
                d.sort_unstable();
                d.dedup();
                d
            }
        }
    }
}

/// Draws one step's data, runs the graph, and applies the optimizer. Any
/// non-finite value surfacing during the step — in an op, or as the loss
/// itself — is reported as divergence together with the domains involved.
fn train_step(
    cfg: &TrainConfig,
    bundle: &mut ModelBundle,
    data: &DomainDataset,
    opt: &mut AdamState<f32>,
    rng: &mut impl rand::Rng,
    epoch: usize,
    global_step: u64,
) -> Result<f64> {
    let drawn = if bundle.method.is_episodic() {
        StepBatch::Episode(sample_episode(data, cfg.meta_batch, cfg.group_size, rng)?)
    } else {
        // Baselines see one flat batch. Domain-uniform sampling is the
        // only thing that distinguishes the upweighted baseline.
        let mode = if bundle.method == Method::Uw {
            BatchMode::OverDomains
        } else {
            BatchMode::OverExamples
        };
        StepBatch::Mixed(sample_batch(
            data,
            cfg.meta_batch * cfg.group_size,
            mode,
            true,
            rng,
        )?)
    };

    let diverged = |loss: f64| Error::TrainDiverged {
        step: global_step,
        epoch,
        loss,
        domains: drawn.domains(),
    };
    match apply_step(cfg, bundle, &drawn, opt) {
        Ok(loss) if loss.is_finite() => Ok(loss),
        Ok(loss) => Err(diverged(loss)),
        Err(Error::NonFinite { .. }) => Err(diverged(f64::NAN)),
        Err(e) => Err(e),
    }
}

/// Builds the step's graph, extracts gradient tensors in parameter order,
/// and updates the parameters.
fn apply_step(
    cfg: &TrainConfig,
    bundle: &mut ModelBundle,
    drawn: &StepBatch,
    opt: &mut AdamState<f32>,
) -> Result<f64> {
    let ModelBundle {
        method,
        pred,
        ctx,
        lossnet,
        params,
        buffers,
        ..
    } = bundle;
    let method = *method;

    // Gradients and loss are summed over groups, so each group can run
    // in its own graph: the meta-objective is a mean of per-group
    // losses and its gradient is the sum of per-group gradients.  One
    // tape per group keeps peak memory at a single group's activations
    // — essential for the learned-loss method, whose kept-alive inner
    // tape is by far the largest allocation of a step.
    let mut total_loss = 0.0f64;
    let mut grad_acc: Option<Vec<Tensor<f32>>> = None;
    let mut fold = |loss_value: f64, grads: Vec<Tensor<f32>>| -> Result<()> {
        total_loss += loss_value;
        match &mut grad_acc {
            None => grad_acc = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    let dst = a.data_mut();
                    for (d, s) in dst.iter_mut().zip(g.data()) {
                        *d += *s;
                    }
                }
            }
        }
        Ok(())
    };

    match drawn {
        StepBatch::Episode(episode) => {
            let weight = 1.0 / (cfg.meta_batch * cfg.group_size) as f32;
            for group in &episode.groups {
                let mut g = Graph::<f32>::new();
                let bound = BoundParams::bind(&mut g, params);
                let mut phase = Phase::Train(buffers);
                let x = g.constant(group.x.clone());
                let logits = match method {
                    Method::ArmCml => {
                        let ctx_net = ctx.as_ref().expect("validated at assembly");
                        cml_forward(&mut g, ctx_net, pred, &bound, &mut phase, x)?.logits
                    }
                    Method::ArmBn => {
                        let mut mode = phase.mode();
                        forward(&mut g, pred, &bound, &mut mode, x)?
                    }
                    Method::ArmLl => {
                        let loss_net = lossnet.as_ref().expect("validated at assembly");
                        let adapted = ll_adapt(
                            &mut g, pred, loss_net, &bound, &mut phase, x, cfg.adapt, true,
                        )?;
                        let mut mode = phase.mode();
                        forward(&mut g, pred, &adapted, &mut mode, x)?
                    }
                    _ => unreachable!("is_episodic covers exactly the arm methods"),
                };
                let ce = g.softmax_cross_entropy(logits, &group.y)?;
                let group_sum = g.sum_all(ce)?;
                let loss = g.scale(group_sum, weight)?;
                let loss_value = g.value(loss).item()? as f64;
                let nodes = bound.node_ids();
                let grads = g.backward(loss, &nodes, false)?;
                let mut tensors = Vec::with_capacity(nodes.len());
                for &n in &nodes {
                    tensors.push(g.value(grads.require(n)?).clone());
                }
                drop(g);
                fold(loss_value, tensors)?;
            }
        }
        StepBatch::Mixed(batch) => {
            let mut g = Graph::<f32>::new();
            let bound = BoundParams::bind(&mut g, params);
            let mut phase = Phase::Train(buffers);
            let x = g.constant(batch.x.clone());
            let logits = match method {
                Method::Erm | Method::Uw | Method::BnAdapt => {
                    let mut mode = phase.mode();
                    forward(&mut g, pred, &bound, &mut mode, x)?
                }
                // Ablations run the adaptation machinery on the whole
                // mixed batch as one group: same architecture, no domain
                // structure.
                Method::CmlAblation => {
                    let ctx_net = ctx.as_ref().expect("validated at assembly");
                    cml_forward(&mut g, ctx_net, pred, &bound, &mut phase, x)?.logits
                }
                Method::LlAblation => {
                    let loss_net = lossnet.as_ref().expect("validated at assembly");
                    let adapted =
                        ll_adapt(&mut g, pred, loss_net, &bound, &mut phase, x, cfg.adapt, true)?;
                    let mut mode = phase.mode();
                    forward(&mut g, pred, &adapted, &mut mode, x)?
                }
                _ => unreachable!("episodic methods handled above"),
            };
            let ce = g.softmax_cross_entropy(logits, &batch.y)?;
            let loss = g.mean_all(ce)?;
            let loss_value = g.value(loss).item()? as f64;
            let nodes = bound.node_ids();
            let grads = g.backward(loss, &nodes, false)?;
            let mut tensors = Vec::with_capacity(nodes.len());
            for &n in &nodes {
                tensors.push(g.value(grads.require(n)?).clone());
            }
            // Free the tape before touching the parameters: the optimizer
            // updates them in place, which requires sole ownership of
            // their storage.
            drop(g);
            fold(loss_value, tensors)?;
        }
    }

    let grad_tensors = grad_acc.expect("at least one group per step");
    adam_step(&cfg.adam, opt, params, &grad_tensors)?;
    Ok(total_loss)
}
