//! Networks: layer specs, parameter sets, batch normalization with three
//! statistics modes, the reference architectures, and initialization.
//!
//! A [`Network`] is a flat layer list interpreted against an input shape;
//! parameters live outside the network in a [`ParamSet`] (ordered, named,
//! partitioned into prediction-side θ and adaptation-side φ), so the same
//! network can be run under different parameter bindings — in particular
//! under post-adaptation parameters that are themselves graph nodes.
//!
//! Batch norm is built from ordinary tape primitives (mean, square, rsqrt,
//! channel ops) rather than fused, so gradients flow through the batch
//! statistics; that is what lets meta-training learn parameters that work
//! *with* test-time moment swaps, and it keeps second-order passes correct.

pub mod checkpoint;
pub mod optim;

pub use optim::{adam_step, sgd_step, AdamConfig, AdamState, OptState, SgdConfig, SgdState};

use std::collections::HashMap;

use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::kernels::gemm::Gemm;
use crate::tensor::{Scalar, Tensor};

// ── Parameter sets ──────────────────────────────────────────────────────

/// Which side of the meta-learned split a parameter belongs to:
/// `Prediction` (θ, consumed by the prediction network) or `Adaptation`
/// (φ, consumed by the adaptation mechanism).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Prediction,
    Adaptation,
}

#[derive(Debug, Clone)]
pub struct ParamEntry<F: Scalar> {
    pub name: String,
    pub partition: Partition,
    pub tensor: Tensor<F>,
}

/// Ordered, named collection of trainable tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<F: Scalar> {
    entries: Vec<ParamEntry<F>>,
    index: HashMap<String, usize>,
}

impl<F: Scalar> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, partition: Partition, tensor: Tensor<F>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name `{name}`")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry {
            name,
            partition,
            tensor,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<F>> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].tensor)
            .ok_or_else(|| Error::NotFound(format!("parameter `{name}`")))
    }

    pub fn entries(&self) -> &[ParamEntry<F>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<F>] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn total_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    /// Merges another set under a name prefix (`prefix.name`).
    pub fn absorb(&mut self, prefix: &str, other: ParamSet<F>) -> Result<()> {
        for e in other.entries {
            self.insert(format!("{prefix}.{}", e.name), e.partition, e.tensor)?;
        }
        Ok(())
    }
}

// ── Batch-norm state ────────────────────────────────────────────────────

/// Exponential-moving-average settings for training-time statistics.
#[derive(Debug, Clone, Copy)]
pub struct BatchNormConfig {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

/// Per-layer first and second moments, shape `(C,)` each.
#[derive(Debug, Clone)]
pub struct BnStats<F: Scalar> {
    pub mean: Tensor<F>,
    pub var: Tensor<F>,
}

/// Named per-layer normalization statistics, ordered by layer position.
/// Holds the running buffers of a model — or, in the streaming path, the
/// incrementally maintained payload.
#[derive(Debug, Clone, Default)]
pub struct BnBuffers<F: Scalar> {
    order: Vec<String>,
    map: HashMap<String, BnStats<F>>,
}

impl<F: Scalar> BnBuffers<F> {
    pub fn new() -> Self {
        BnBuffers {
            order: Vec::new(),
            map: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, stats: BnStats<F>) {
        let name = name.into();
        if !self.map.contains_key(&name) {
            self.order.push(name.clone());
        }
        self.map.insert(name, stats);
    }

    pub fn get(&self, name: &str) -> Result<&BnStats<F>> {
        self.map
            .get(name)
            .ok_or_else(|| Error::NotFound(format!("batch-norm buffers for `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut BnStats<F>> {
        self.map
            .get_mut(name)
            .ok_or_else(|| Error::NotFound(format!("batch-norm buffers for `{name}`")))
    }

    pub fn names(&self) -> &[String] {
        &self.order
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Total stored scalars (used by the streaming memory contract).
    pub fn total_scalars(&self) -> usize {
        self.order
            .iter()
            .map(|n| {
                let s = &self.map[n];
                s.mean.numel() + s.var.numel()
            })
            .sum()
    }
}

/// How batch-norm layers obtain their normalization statistics.
pub enum BnMode<'a, F: Scalar> {
    /// Normalize by the current batch's moments and fold them into the
    /// running buffers by EMA (training).
    TrainBatch(&'a mut BnBuffers<F>),
    /// Normalize by stored statistics — the model's running buffers for
    /// standard evaluation, or an externally maintained payload for
    /// streaming adaptation. Buffers are read-only.
    EvalRunning(&'a BnBuffers<F>),
    /// Normalize by the current batch's moments; running buffers are
    /// untouched (test-time moment adaptation).
    EvalBatch,
}

// ── Layers and networks ─────────────────────────────────────────────────

/// One layer of a sequential network. Parameter-bearing layers carry the
/// name their tensors are registered under.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d {
        name: String,
        out_channels: usize,
        kernel: usize,
        pad: usize,
        bias: bool,
    },
    BatchNorm {
        name: String,
    },
    Relu,
    MaxPool {
        size: usize,
    },
    AvgPool {
        size: usize,
    },
    Flatten,
    Dense {
        name: String,
        out_dim: usize,
    },
}

/// A sequential network over a fixed per-example input shape.
#[derive(Debug, Clone)]
pub struct Network {
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
    pub bn: BatchNormConfig,
}

impl Network {
    pub fn new(input_shape: &[usize], layers: Vec<Layer>) -> Self {
        Network {
            input_shape: input_shape.to_vec(),
            layers,
            bn: BatchNormConfig::default(),
        }
    }

    /// Walks the layer list, returning `(per-layer input shapes, output
    /// shape)` for a batch of `n` examples. Errors mirror what the forward
    /// pass would raise.
    pub fn shapes(&self, n: usize) -> Result<(Vec<Vec<usize>>, Vec<usize>)> {
        let mut shape: Vec<usize> = std::iter::once(n).chain(self.input_shape.iter().copied()).collect();
        let mut ins = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            ins.push(shape.clone());
            shape = match layer {
                Layer::Conv2d {
                    out_channels,
                    kernel,
                    pad,
                    ..
                } => {
                    if shape.len() != 4 {
                        return Err(Error::shape("conv2d", format!("rank-4 input required, got {:?}", shape)));
                    }
                    let oh = crate::kernels::conv::out_dim(shape[2], *kernel, *pad)
                        .filter(|&d| d > 0)
                        .ok_or_else(|| Error::shape("conv2d", format!("kernel {kernel} too large for {:?}", shape)))?;
                    let ow = crate::kernels::conv::out_dim(shape[3], *kernel, *pad)
                        .filter(|&d| d > 0)
                        .ok_or_else(|| Error::shape("conv2d", format!("kernel {kernel} too large for {:?}", shape)))?;
                    vec![shape[0], *out_channels, oh, ow]
                }
                Layer::BatchNorm { .. } | Layer::Relu => shape,
                Layer::MaxPool { size } | Layer::AvgPool { size } => {
                    if shape.len() != 4 || shape[2] % size != 0 || shape[3] % size != 0 {
                        return Err(Error::shape(
                            "pool2d",
                            format!("window {size} does not tile {:?}", shape),
                        ));
                    }
                    vec![shape[0], shape[1], shape[2] / size, shape[3] / size]
                }
                Layer::Flatten => vec![shape[0], shape[1..].iter().product()],
                Layer::Dense { out_dim, .. } => {
                    if shape.len() != 2 {
                        return Err(Error::shape("dense", format!("rank-2 input required, got {:?}", shape)));
                    }
                    vec![shape[0], *out_dim]
                }
            };
        }
        Ok((ins, shape))
    }

    /// Initializes parameters (Kaiming-uniform fan-in for conv/dense
    /// weights, zero biases, γ=1/β=0) and zero/one running buffers, under
    /// the given partition tag.
    pub fn init<F: Scalar, R: Rng>(
        &self,
        partition: Partition,
        rng: &mut R,
    ) -> Result<(ParamSet<F>, BnBuffers<F>)> {
        let mut params = ParamSet::new();
        let mut buffers = BnBuffers::new();
        let (ins, _) = self.shapes(1)?;
        for (layer, in_shape) in self.layers.iter().zip(ins.iter()) {
            match layer {
                Layer::Conv2d {
                    name,
                    out_channels,
                    kernel,
                    bias,
                    ..
                } => {
                    let c_in = in_shape[1];
                    let fan_in = c_in * kernel * kernel;
                    let w = kaiming_uniform(&[*out_channels, c_in, *kernel, *kernel], fan_in, rng);
                    params.insert(format!("{name}.w"), partition, w)?;
                    if *bias {
                        params.insert(format!("{name}.b"), partition, Tensor::zeros(&[*out_channels]))?;
                    }
                }
                Layer::BatchNorm { name } => {
                    let c = in_shape[1];
                    params.insert(format!("{name}.gamma"), partition, Tensor::ones(&[c]))?;
                    params.insert(format!("{name}.beta"), partition, Tensor::zeros(&[c]))?;
                    buffers.insert(
                        name.clone(),
                        BnStats {
                            mean: Tensor::zeros(&[c]),
                            var: Tensor::ones(&[c]),
                        },
                    );
                }
                Layer::Dense { name, out_dim } => {
                    let in_dim = in_shape[1];
                    let w = kaiming_uniform(&[in_dim, *out_dim], in_dim, rng);
                    params.insert(format!("{name}.w"), partition, w)?;
                    params.insert(format!("{name}.b"), partition, Tensor::zeros(&[*out_dim]))?;
                }
                Layer::Relu | Layer::MaxPool { .. } | Layer::AvgPool { .. } | Layer::Flatten => {}
            }
        }
        Ok((params, buffers))
    }
}

/// Kaiming-uniform init for ReLU fan-in: `U(−√(6/fan_in), √(6/fan_in))`.
fn kaiming_uniform<F: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<F> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    let numel: usize = shape.iter().product();
    let data: Vec<F> = (0..numel).map(|_| F::from_f64(dist.sample(rng))).collect();
    Tensor::from_vec(shape, data).expect("shape/len consistent by construction")
}

// ── Binding parameters onto a graph ─────────────────────────────────────

/// One name → node binding.
#[derive(Debug, Clone)]
pub struct BoundEntry {
    pub name: String,
    pub partition: Partition,
    pub node: NodeId,
}

/// Parameter name → tape node binding for one forward pass. Starts from the
/// stored tensors (as differentiable leaves) and admits per-name overrides,
/// which is how post-adaptation parameters (tape nodes themselves) are
/// injected.
#[derive(Debug, Clone)]
pub struct BoundParams {
    ordered: Vec<BoundEntry>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    /// Binds every parameter as a differentiable leaf.
    pub fn bind<F: Scalar + Gemm>(g: &mut Graph<F>, params: &ParamSet<F>) -> Self {
        Self::from_nodes(params.entries().iter().map(|e| {
            let id = g.leaf(e.tensor.clone(), true);
            (e.name.clone(), e.partition, id)
        }))
    }

    /// Builds a binding from explicit nodes (tests mix leaves and
    /// constants this way).
    pub fn from_nodes(entries: impl IntoIterator<Item = (String, Partition, NodeId)>) -> Self {
        let mut ordered = Vec::new();
        let mut index = HashMap::new();
        for (name, partition, node) in entries {
            index.insert(name.clone(), ordered.len());
            ordered.push(BoundEntry {
                name,
                partition,
                node,
            });
        }
        BoundParams { ordered, index }
    }

    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.index
            .get(name)
            .map(|&i| self.ordered[i].node)
            .ok_or_else(|| Error::NotFound(format!("bound parameter `{name}`")))
    }

    /// Replaces the node a name resolves to (post-adaptation parameters).
    pub fn set(&mut self, name: &str, node: NodeId) -> Result<()> {
        let i = self
            .index
            .get(name)
            .copied()
            .ok_or_else(|| Error::NotFound(format!("bound parameter `{name}`")))?;
        self.ordered[i].node = node;
        Ok(())
    }

    /// Bindings in parameter order.
    pub fn entries(&self) -> &[BoundEntry] {
        &self.ordered
    }

    /// Node ids in parameter order.
    pub fn node_ids(&self) -> Vec<NodeId> {
        self.ordered.iter().map(|e| e.node).collect()
    }

    /// `(name, node)` pairs of one partition, in parameter order.
    pub fn of_partition(&self, p: Partition) -> Vec<(String, NodeId)> {
        self.ordered
            .iter()
            .filter(|e| e.partition == p)
            .map(|e| (e.name.clone(), e.node))
            .collect()
    }
}

// ── Forward pass ────────────────────────────────────────────────────────

/// Normalizes `x` by fixed per-channel statistics (used by the
/// running-stats mode and by the streaming adapter, which maintains the
/// statistics itself).
pub fn bn_normalize_fixed<F: Scalar + Gemm>(
    g: &mut Graph<F>,
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
    stats: &BnStats<F>,
    eps: f64,
) -> Result<NodeId> {
    let mean = g.constant(stats.mean.clone());
    let inv_std = {
        let v = stats.var.map(|v| F::from_f64(1.0 / (v.as_f64() + eps).sqrt()));
        g.constant(v)
    };
    let centered = g.sub_ch(x, mean)?;
    let scale = g.mul(gamma, inv_std)?;
    let scaled = g.mul_ch(centered, scale)?;
    g.add_ch(scaled, beta)
}

/// Normalizes `x` by its own batch moments, as differentiable graph nodes.
/// Returns the output and the `(mean, biased var)` nodes so the training
/// mode can fold them into running buffers.
fn bn_normalize_batch<F: Scalar + Gemm>(
    g: &mut Graph<F>,
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
    eps: f64,
) -> Result<(NodeId, NodeId, NodeId)> {
    let rank = g.shape(x).len();
    if rank < 2 {
        return Err(Error::shape(
            "batch_norm",
            format!("rank >= 2 required, got {:?}", g.shape(x)),
        ));
    }
    let axes: Vec<usize> = (0..rank).filter(|&i| i != 1).collect();
    let mean = g.mean_axes(x, &axes, false)?;
    let centered = g.sub_ch(x, mean)?;
    let sq = g.square(centered)?;
    let var = g.mean_axes(sq, &axes, false)?;
    let var_eps = g.add_scalar(var, F::from_f64(eps))?;
    let std = g.sqrt(var_eps)?;
    let inv_std = g.recip(std)?;
    let scale = g.mul(gamma, inv_std)?;
    let scaled = g.mul_ch(centered, scale)?;
    let out = g.add_ch(scaled, beta)?;
    Ok((out, mean, var))
}

/// Applies one layer under the given parameter binding and batch-norm mode.
pub fn apply_layer<F: Scalar + Gemm>(
    g: &mut Graph<F>,
    layer: &Layer,
    params: &BoundParams,
    bn_cfg: &BatchNormConfig,
    bn_mode: &mut BnMode<'_, F>,
    x: NodeId,
) -> Result<NodeId> {
    match layer {
        Layer::Conv2d { name, pad, bias, .. } => {
            let w = params.get(&format!("{name}.w"))?;
            let y = g.conv2d(x, w, *pad)?;
            if *bias {
                let b = params.get(&format!("{name}.b"))?;
                g.add_ch(y, b)
            } else {
                Ok(y)
            }
        }
        Layer::BatchNorm { name } => {
            let gamma = params.get(&format!("{name}.gamma"))?;
            let beta = params.get(&format!("{name}.beta"))?;
            match bn_mode {
                BnMode::TrainBatch(buffers) => {
                    let (out, mean, var) = bn_normalize_batch(g, x, gamma, beta, bn_cfg.eps)?;
                    // Fold batch moments into the running buffers (outside
                    // the graph). The variance folded in is the unbiased
                    // estimate, matching the usual convention; normalization
                    // itself used the biased one.
                    let shape = g.shape(x);
                    let count: usize = shape
                        .iter()
                        .enumerate()
                        .filter(|&(i, _)| i != 1)
                        .map(|(_, &d)| d)
                        .product();
                    let unbias = count as f64 / (count.saturating_sub(1).max(1)) as f64;
                    let m = bn_cfg.momentum;
                    let stats = buffers.get_mut(name)?;
                    let batch_mean = g.value(mean).clone();
                    let batch_var = g.value(var).clone();
                    for (r, &b) in stats.mean.data_mut().iter_mut().zip(batch_mean.data()) {
                        *r = F::from_f64((1.0 - m) * r.as_f64() + m * b.as_f64());
                    }
                    for (r, &b) in stats.var.data_mut().iter_mut().zip(batch_var.data()) {
                        *r = F::from_f64((1.0 - m) * r.as_f64() + m * b.as_f64() * unbias);
                    }
                    Ok(out)
                }
                BnMode::EvalRunning(buffers) => {
                    let stats = buffers.get(name)?;
                    bn_normalize_fixed(g, x, gamma, beta, stats, bn_cfg.eps)
                }
                BnMode::EvalBatch => {
                    let (out, _, _) = bn_normalize_batch(g, x, gamma, beta, bn_cfg.eps)?;
                    Ok(out)
                }
            }
        }
        Layer::Relu => g.relu(x),
        Layer::MaxPool { size } => g.maxpool2d(x, *size),
        Layer::AvgPool { size } => g.avgpool2d(x, *size),
        Layer::Flatten => g.flatten(x),
        Layer::Dense { name, .. } => {
            let w = params.get(&format!("{name}.w"))?;
            let b = params.get(&format!("{name}.b"))?;
            let y = g.matmul(x, w)?;
            let yshape = g.shape(y).to_vec();
            let b_row = g.reshape(b, &[1, yshape[1]])?;
            let b_full = g.broadcast_to(b_row, &yshape)?;
            g.add(y, b_full)
        }
    }
}

/// Runs the whole network; `x` is a batch node shaped `(n, input_shape...)`.
pub fn forward<F: Scalar + Gemm>(
    g: &mut Graph<F>,
    net: &Network,
    params: &BoundParams,
    bn_mode: &mut BnMode<'_, F>,
    x: NodeId,
) -> Result<NodeId> {
    let mut cur = x;
    for layer in &net.layers {
        cur = apply_layer(g, layer, params, &net.bn, bn_mode, cur)?;
    }
    Ok(cur)
}

// ── Reference architectures ─────────────────────────────────────────────

/// Which reference network to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchKind {
    /// Full prediction network: four 5×5 conv blocks (first two padded,
    /// last two followed by 2×2 max pooling), 4×4 average pooling, a
    /// 200-unit dense layer, and the class logits.
    PredictionFull,
    /// Contextual variant: the full network minus the first two conv
    /// blocks; its input carries the context channels alongside the image.
    PredictionContextual,
    /// Context network: two padded 5×5 conv blocks, then a padded 5×5
    /// convolution down to the context channels (no activation after it).
    ContextNet,
    /// Learned per-example loss: logits → hidden → scalar.
    LossNet,
}

/// Sizes for the reference architectures. Defaults reproduce the reference
/// configuration; the desk-scale runs shrink `conv_filters`/
/// `context_filters`.
#[derive(Debug, Clone)]
pub struct ArchConfig {
    pub in_channels: usize,
    pub image_hw: usize,
    pub num_classes: usize,
    pub conv_filters: usize,
    pub context_filters: usize,
    pub context_channels: usize,
    pub dense_hidden: usize,
    pub loss_hidden: usize,
    pub conv_bias: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            in_channels: 1,
            image_hw: 28,
            num_classes: 10,
            conv_filters: 128,
            context_filters: 64,
            context_channels: 12,
            dense_hidden: 200,
            loss_hidden: 32,
            conv_bias: false,
        }
    }
}

/// Builds one of the reference architectures. `prefix` namespaces the
/// layer (and therefore parameter/buffer) names, so several networks can
/// share one parameter set — e.g. `"pred."` and `"ctx."`.
pub fn build_architecture(kind: ArchKind, cfg: &ArchConfig, prefix: &str) -> Network {
    let f = cfg.conv_filters;
    let k = 5usize;
    let conv = |name: &str, out: usize, pad: usize| Layer::Conv2d {
        name: format!("{prefix}{name}"),
        out_channels: out,
        kernel: k,
        pad,
        bias: cfg.conv_bias,
    };
    let bn = |name: &str| Layer::BatchNorm {
        name: format!("{prefix}{name}"),
    };
    match kind {
        ArchKind::PredictionFull => Network::new(
            &[cfg.in_channels, cfg.image_hw, cfg.image_hw],
            vec![
                conv("conv1", f, 2),
                bn("bn1"),
                Layer::Relu,
                conv("conv2", f, 2),
                bn("bn2"),
                Layer::Relu,
                conv("conv3", f, 0),
                bn("bn3"),
                Layer::Relu,
                Layer::MaxPool { size: 2 },
                conv("conv4", f, 0),
                bn("bn4"),
                Layer::Relu,
                Layer::MaxPool { size: 2 },
                Layer::AvgPool { size: 4 },
                Layer::Flatten,
                Layer::Dense {
                    name: format!("{prefix}fc1"),
                    out_dim: cfg.dense_hidden,
                },
                Layer::Relu,
                Layer::Dense {
                    name: format!("{prefix}fc2"),
                    out_dim: cfg.num_classes,
                },
            ],
        ),
        ArchKind::PredictionContextual => Network::new(
            &[
                cfg.in_channels + cfg.context_channels,
                cfg.image_hw,
                cfg.image_hw,
            ],
            vec![
                conv("conv3", f, 0),
                bn("bn3"),
                Layer::Relu,
                Layer::MaxPool { size: 2 },
                conv("conv4", f, 0),
                bn("bn4"),
                Layer::Relu,
                Layer::MaxPool { size: 2 },
                Layer::AvgPool { size: 4 },
                Layer::Flatten,
                Layer::Dense {
                    name: format!("{prefix}fc1"),
                    out_dim: cfg.dense_hidden,
                },
                Layer::Relu,
                Layer::Dense {
                    name: format!("{prefix}fc2"),
                    out_dim: cfg.num_classes,
                },
            ],
        ),
        ArchKind::ContextNet => {
            let cf = cfg.context_filters;
            Network::new(
                &[cfg.in_channels, cfg.image_hw, cfg.image_hw],
                vec![
                    conv("conv1", cf, 2),
                    bn("bn1"),
                    Layer::Relu,
                    conv("conv2", cf, 2),
                    bn("bn2"),
                    Layer::Relu,
                    conv("conv3", cfg.context_channels, 2),
                ],
            )
        }
        ArchKind::LossNet => Network::new(
            &[cfg.num_classes],
            vec![
                Layer::Dense {
                    name: format!("{prefix}fc1"),
                    out_dim: cfg.loss_hidden,
                },
                Layer::Relu,
                Layer::Dense {
                    name: format!("{prefix}fc2"),
                    out_dim: 1,
                },
            ],
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn init_f32(net: &Network, seed: u64) -> (ParamSet<f32>, BnBuffers<f32>) {
        let mut r = rng::stream(seed, "init");
        net.init(Partition::Prediction, &mut r).unwrap()
    }

    /// Hand-derived parameter counts for the reference architectures
    /// (conv weights OC*C*5*5, batch norm 2*C, dense (in+1)*out):
    ///
    /// full:  conv1 3200 + bn 256 | conv2 409600 + 256 | conv3 409600 + 256
    ///        | conv4 409600 + 256 | fc1 128*200+200 | fc2 200*10+10
    ///        = 1_260_834
    /// ctx:   1600 + 128 + 102400 + 128 + 19200 = 123_456
    /// cml:   conv3 5*5*13*128 = 41600 + 256 | conv4 409600 + 256
    ///        | fc1 25800 | fc2 2010 = 479_522
    /// loss:  10*32+32 + 32*1+1 = 385
    #[test]
    fn reference_parameter_counts() {
        let cfg = ArchConfig::default();
        let (p, _) = init_f32(&build_architecture(ArchKind::PredictionFull, &cfg, ""), 0);
        assert_eq!(p.total_scalars(), 1_260_834);
        let (p, _) = init_f32(&build_architecture(ArchKind::ContextNet, &cfg, ""), 0);
        assert_eq!(p.total_scalars(), 123_456);
        let (p, _) = init_f32(&build_architecture(ArchKind::PredictionContextual, &cfg, ""), 0);
        assert_eq!(p.total_scalars(), 479_522);
        let (p, _) = init_f32(&build_architecture(ArchKind::LossNet, &cfg, ""), 0);
        assert_eq!(p.total_scalars(), 385);
    }

    #[test]
    fn full_network_output_shape() {
        let cfg = ArchConfig {
            conv_filters: 8,
            ..ArchConfig::default()
        };
        let net = build_architecture(ArchKind::PredictionFull, &cfg, "");
        let (_, out) = net.shapes(3).unwrap();
        assert_eq!(out, vec![3, 10]);

        let (params, mut bufs) = init_f32(&net, 1);
        let mut g = Graph::<f32>::new();
        let bound = BoundParams::bind(&mut g, &params);
        let x = g.constant(Tensor::zeros(&[3, 1, 28, 28]));
        let mut mode = BnMode::TrainBatch(&mut bufs);
        let y = forward(&mut g, &net, &bound, &mut mode, x).unwrap();
        assert_eq!(g.shape(y), &[3, 10]);
    }

    #[test]
    fn context_network_output_shape() {
        let cfg = ArchConfig {
            context_filters: 8,
            ..ArchConfig::default()
        };
        let net = build_architecture(ArchKind::ContextNet, &cfg, "");
        let (_, out) = net.shapes(5).unwrap();
        assert_eq!(out, vec![5, 12, 28, 28]);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = ArchConfig {
            conv_filters: 4,
            ..ArchConfig::default()
        };
        let net = build_architecture(ArchKind::PredictionFull, &cfg, "");
        let (a, _) = init_f32(&net, 7);
        let (b, _) = init_f32(&net, 7);
        let (c, _) = init_f32(&net, 8);
        for (ea, eb) in a.entries().iter().zip(b.entries()) {
            assert_eq!(ea.tensor.data(), eb.tensor.data(), "{}", ea.name);
        }
        let same_everywhere = a
            .entries()
            .iter()
            .zip(c.entries())
            .all(|(ea, ec)| ea.tensor.data() == ec.tensor.data());
        assert!(!same_everywhere, "different seeds must give different weights");
    }

    #[test]
    fn kaiming_bounds_respected() {
        let mut r = rng::stream(3, "init");
        let t: Tensor<f32> = kaiming_uniform(&[64, 9], 9, &mut r);
        let bound = (6.0f32 / 9.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= bound));
        // values actually spread out
        let distinct = t.data().iter().filter(|v| v.abs() > bound / 2.0).count();
        assert!(distinct > 10);
    }

    /// Training-mode and eval-batch-mode normalization agree elementwise
    /// (the only difference is the running-buffer side effect).
    #[test]
    fn train_batch_and_eval_batch_normalize_identically() {
        let net = Network::new(
            &[3, 4, 4],
            vec![Layer::BatchNorm {
                name: "bn".to_string(),
            }],
        );
        let (params, mut bufs) = init_f32(&net, 2);
        let x_data: Vec<f32> = (0..2 * 3 * 16).map(|i| ((i * 37 % 17) as f32) * 0.3 - 2.0).collect();
        let x_t = Tensor::from_vec(&[2, 3, 4, 4], x_data).unwrap();

        let run = |mode_train: bool, bufs: &mut BnBuffers<f32>| -> Tensor<f32> {
            let mut g = Graph::<f32>::new();
            let bound = BoundParams::bind(&mut g, &params);
            let x = g.constant(x_t.clone());
            let mut mode = if mode_train {
                BnMode::TrainBatch(bufs)
            } else {
                BnMode::EvalBatch
            };
            let y = forward(&mut g, &net, &bound, &mut mode, x).unwrap();
            g.value(y).clone()
        };
        let before = bufs.get("bn").unwrap().clone();
        let eval = run(false, &mut bufs);
        // EvalBatch must not touch the buffers.
        let mid = bufs.get("bn").unwrap().clone();
        assert_eq!(before.mean.data(), mid.mean.data());
        assert_eq!(before.var.data(), mid.var.data());

        let train = run(true, &mut bufs);
        assert!(train.max_abs_diff(&eval).unwrap() < 1e-6);
        // TrainBatch must move the buffers.
        let after = bufs.get("bn").unwrap().clone();
        assert!(after.mean.max_abs_diff(&before.mean).unwrap() > 0.0);
    }

    /// Feeding a batch whose actual moments equal the stored running
    /// statistics makes batch-stat and running-stat prediction agree.
    #[test]
    fn matched_statistics_make_modes_agree() {
        let net = Network::new(
            &[2, 1, 4],
            vec![Layer::BatchNorm {
                name: "bn".to_string(),
            }],
        );
        let (params, mut bufs) = init_f32(&net, 4);
        // Batch with exact per-channel mean 0 and biased variance 1.
        let base = [-1.5f32, -0.5, 0.5, 1.5];
        let scale = (4.0f32 / base.iter().map(|v| v * v).sum::<f32>()).sqrt();
        let mut data = Vec::new();
        for _ in 0..2 {
            for v in base {
                data.push(v * scale);
            }
        }
        let x_t = Tensor::from_vec(&[1, 2, 1, 4], data).unwrap();
        // Running stats matching those moments: mean 0, var 1 (the biased
        // batch variance; the eval path divides by sqrt(var + eps) exactly
        // as the batch path does).
        bufs.insert(
            "bn",
            BnStats {
                mean: Tensor::zeros(&[2]),
                var: Tensor::ones(&[2]),
            },
        );
        let run = |mode: &mut BnMode<f32>| -> Tensor<f32> {
            let mut g = Graph::<f32>::new();
            let bound = BoundParams::bind(&mut g, &params);
            let x = g.constant(x_t.clone());
            let y = forward(&mut g, &net, &bound, mode, x).unwrap();
            g.value(y).clone()
        };
        let via_batch = run(&mut BnMode::EvalBatch);
        let via_running = run(&mut BnMode::EvalRunning(&bufs));
        assert!(via_batch.max_abs_diff(&via_running).unwrap() < 1e-5);
    }

    #[test]
    fn bound_params_support_overrides() {
        let net = Network::new(
            &[3],
            vec![Layer::Dense {
                name: "fc".to_string(),
                out_dim: 2,
            }],
        );
        let (params, mut bufs) = init_f32(&net, 5);
        let mut g = Graph::<f32>::new();
        let mut bound = BoundParams::bind(&mut g, &params);
        let zero_w = g.constant(Tensor::zeros(&[3, 2]));
        bound.set("fc.w", zero_w).unwrap();
        let x = g.constant(Tensor::ones(&[1, 3]));
        let mut mode = BnMode::TrainBatch(&mut bufs);
        let y = forward(&mut g, &net, &bound, &mut mode, x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0]);
    }
}
