//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! A [`Graph`] is a growing list of nodes; each node records its operation,
//! input node ids, and eagerly computed output tensor. Backward walks the
//! tape in reverse and builds vector-Jacobian products *as new tape nodes*,
//! using the same builder methods as the forward pass. Because the primitive
//! set is closed under differentiation (every vjp is expressed with ops from
//! the same set), a gradient produced with `create_graph = true` can itself
//! be differentiated — which is how the learned-loss adaptation trains
//! through its inner gradient step.
//!
//! Numerical contracts enforced here:
//! - every primitive output is checked for non-finite values (NaN/Inf raise
//!   [`Error::NonFinite`] instead of propagating),
//! - shape mismatches name the op and both shapes,
//! - `backward` demands a single-element loss and returns a zero gradient
//!   for targets the loss does not reach.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::{conv, elementwise as ew, gemm, pool, reduce};
use crate::tensor::{Scalar, Tensor};

/// Index of a node on the tape.
pub type NodeId = usize;

/// Tape operations. Variants that need per-instance metadata (padding,
/// argmax indices, class labels, target shapes) carry it inline; index and
/// label buffers sit behind `Arc` so cloning an op is cheap.
#[derive(Clone, Debug)]
pub enum Op<F: Scalar> {
    Leaf,
    Reshape,
    Add,
    Sub,
    Mul,
    Scale(F),
    AddScalar(F),
    Square,
    Sqrt,
    Recip,
    Relu,
    /// `u ⊙ [x_ref > 0]`; differentiable in `u` only (inputs: `[x_ref, u]`).
    ReluMaskMul,
    MatMul,
    Transpose,
    /// `x * s` with `s` a one-element node (inputs: `[x, s]`).
    ScaleByNode,
    SumAxes {
        mask: u32,
        keep: bool,
    },
    MeanAxes {
        mask: u32,
        keep: bool,
    },
    BroadcastTo,
    /// `(x - v[c])`, `(x + v[c])`, `(x * v[c])` over channel axis 1.
    SubCh,
    AddCh,
    MulCh,
    Conv2d {
        pad: usize,
    },
    /// Adjoint of [`Op::Conv2d`] w.r.t. its input (inputs: `[dout, weight]`).
    ConvInputGrad {
        pad: usize,
        in_h: usize,
        in_w: usize,
    },
    /// Adjoint of [`Op::Conv2d`] w.r.t. its filters (inputs: `[x, dout]`).
    ConvWeightGrad {
        pad: usize,
        kh: usize,
        kw: usize,
    },
    MaxPool {
        size: usize,
        indices: Arc<Vec<u32>>,
    },
    /// Scatter of pooled values to recorded argmax positions.
    MaxUnpool {
        indices: Arc<Vec<u32>>,
    },
    /// Gather of full-size values at recorded argmax positions.
    PoolGather {
        indices: Arc<Vec<u32>>,
    },
    AvgPool {
        size: usize,
    },
    AvgUnpool {
        size: usize,
    },
    ConcatCh,
    SliceCh {
        start: usize,
        len: usize,
    },
    EmbedCh {
        start: usize,
        total: usize,
    },
    Softmax,
    /// Per-example `lse(x_i) - x_i[y_i]` (labels are constants).
    SoftmaxCrossEntropy {
        labels: Arc<Vec<u32>>,
    },
    L2Norm,
}

impl<F: Scalar> Op<F> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Reshape => "reshape",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Square => "square",
            Op::Sqrt => "sqrt",
            Op::Recip => "recip",
            Op::Relu => "relu",
            Op::ReluMaskMul => "relu_mask_mul",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::ScaleByNode => "scale_by_node",
            Op::SumAxes { .. } => "sum_axes",
            Op::MeanAxes { .. } => "mean_axes",
            Op::BroadcastTo => "broadcast_to",
            Op::SubCh => "sub_ch",
            Op::AddCh => "add_ch",
            Op::MulCh => "mul_ch",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvInputGrad { .. } => "conv_input_grad",
            Op::ConvWeightGrad { .. } => "conv_weight_grad",
            Op::MaxPool { .. } => "maxpool2d",
            Op::MaxUnpool { .. } => "max_unpool2d",
            Op::PoolGather { .. } => "pool_gather",
            Op::AvgPool { .. } => "avgpool2d",
            Op::AvgUnpool { .. } => "avg_unpool2d",
            Op::ConcatCh => "concat_channels",
            Op::SliceCh { .. } => "slice_channels",
            Op::EmbedCh { .. } => "embed_channels",
            Op::Softmax => "softmax",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::L2Norm => "l2norm",
        }
    }
}

struct Node<F: Scalar> {
    op: Op<F>,
    inputs: Vec<NodeId>,
    value: Tensor<F>,
    requires_grad: bool,
}

/// Gradient nodes produced by [`Graph::backward`], keyed by the requested
/// target ids. Targets unreachable from the loss map to zero-constant nodes.
#[derive(Debug)]
pub struct Gradients {
    map: HashMap<NodeId, NodeId>,
}

impl Gradients {
    /// Gradient node for `wrt`, if it was requested.
    pub fn node(&self, wrt: NodeId) -> Option<NodeId> {
        self.map.get(&wrt).copied()
    }

    pub fn require(&self, wrt: NodeId) -> Result<NodeId> {
        self.node(wrt)
            .ok_or_else(|| Error::Contract(format!("no gradient was requested for node {wrt}")))
    }
}

/// Reverse-mode tape.
pub struct Graph<F: Scalar> {
    nodes: Vec<Node<F>>,
    /// While false, newly created nodes never set `requires_grad`; used for
    /// `create_graph = false` backward passes so their product nodes do not
    /// participate in later differentiation.
    grad_marks: bool,
}

impl<F: Scalar + gemm::Gemm> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar + gemm::Gemm> Graph<F> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grad_marks: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Output tensor of a node.
    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    /// Adds an input node. `requires_grad` marks it as a differentiation
    /// target (a parameter or an adaptation input).
    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> NodeId {
        let rg = requires_grad && self.grad_marks;
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            value,
            requires_grad: rg,
        });
        self.nodes.len() - 1
    }

    /// Adds a non-differentiable constant.
    pub fn constant(&mut self, value: Tensor<F>) -> NodeId {
        self.leaf(value, false)
    }

    fn push(&mut self, op: Op<F>, inputs: Vec<NodeId>, value: Tensor<F>) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(Error::NonFinite {
                op: op.name().to_string(),
            });
        }
        let requires_grad = self.grad_marks && inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
        });
        Ok(self.nodes.len() - 1)
    }

    // ── Elementwise builders ────────────────────────────────────────────

    fn binary_same_shape(
        &mut self,
        op: Op<F>,
        a: NodeId,
        b: NodeId,
        f: impl Fn(F, F) -> F,
    ) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        if va.shape() != vb.shape() {
            return Err(Error::shape(
                op.name(),
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let mut out = Tensor::zeros(va.shape());
        ew::binary(va.data(), vb.data(), out.data_mut(), f);
        self.push(op, vec![a, b], out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(Op::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(Op::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(Op::Mul, a, b, |x, y| x * y)
    }

    fn unary(&mut self, op: Op<F>, a: NodeId, f: impl Fn(F) -> F) -> Result<NodeId> {
        let va = &self.nodes[a].value;
        let mut out = Tensor::zeros(va.shape());
        ew::unary(va.data(), out.data_mut(), f);
        self.push(op, vec![a], out)
    }

    pub fn scale(&mut self, a: NodeId, c: F) -> Result<NodeId> {
        self.unary(Op::Scale(c), a, |x| x * c)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: F) -> Result<NodeId> {
        self.unary(Op::AddScalar(c), a, |x| x + c)
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(Op::Square, a, |x| x * x)
    }

    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(Op::Sqrt, a, |x| x.sqrt())
    }

    pub fn recip(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(Op::Recip, a, |x| x.recip())
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(Op::Relu, a, |x| if x > F::zero() { x } else { F::zero() })
    }

    /// `u ⊙ [x_ref > 0]`. This is ReLU's backward map exposed as a primitive
    /// so that it can itself be differentiated (w.r.t. `u`).
    pub fn relu_mask_mul(&mut self, x_ref: NodeId, u: NodeId) -> Result<NodeId> {
        let (vx, vu) = (&self.nodes[x_ref].value, &self.nodes[u].value);
        if vx.shape() != vu.shape() {
            return Err(Error::shape(
                "relu_mask_mul",
                format!("{:?} vs {:?}", vx.shape(), vu.shape()),
            ));
        }
        let mut out = Tensor::zeros(vx.shape());
        ew::relu_mask_mul(vx.data(), vu.data(), out.data_mut());
        self.push(Op::ReluMaskMul, vec![x_ref, u], out)
    }

    /// Multiplies every element of `x` by the one-element node `s`.
    pub fn scale_by(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        if self.nodes[s].value.numel() != 1 {
            return Err(Error::shape(
                "scale_by_node",
                format!("scale must have one element, got {:?}", self.shape(s)),
            ));
        }
        let sv = self.nodes[s].value.data()[0];
        let vx = &self.nodes[x].value;
        let mut out = Tensor::zeros(vx.shape());
        ew::unary(vx.data(), out.data_mut(), |v| v * sv);
        self.push(Op::ScaleByNode, vec![x, s], out)
    }

    // ── Shape builders ──────────────────────────────────────────────────

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.nodes[a].value.reshaped(shape)?;
        self.push(Op::Reshape, vec![a], out)
    }

    /// Flattens `(n, ...)` to `(n, rest)`.
    pub fn flatten(&mut self, a: NodeId) -> Result<NodeId> {
        let shape = self.shape(a);
        if shape.is_empty() {
            return Err(Error::shape("reshape", "cannot flatten a scalar".to_string()));
        }
        let n = shape[0];
        let rest: usize = shape[1..].iter().product();
        self.reshape(a, &[n, rest])
    }

    pub fn broadcast_to(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let in_shape = self.shape(a).to_vec();
        let ok = in_shape.is_empty()
            || (in_shape.len() == shape.len()
                && in_shape
                    .iter()
                    .zip(shape.iter())
                    .all(|(&i, &o)| i == o || i == 1));
        if !ok {
            return Err(Error::shape(
                "broadcast_to",
                format!("{:?} does not broadcast to {:?}", in_shape, shape),
            ));
        }
        let mut out = Tensor::zeros(shape);
        reduce::broadcast(self.nodes[a].value.data(), &in_shape, shape, out.data_mut());
        self.push(Op::BroadcastTo, vec![a], out)
    }

    fn reduce_axes(&mut self, a: NodeId, axes: &[usize], keep: bool, mean: bool) -> Result<NodeId> {
        let in_shape = self.shape(a).to_vec();
        let name = if mean { "mean_axes" } else { "sum_axes" };
        let mut mask = 0u32;
        for &ax in axes {
            if ax >= in_shape.len() {
                return Err(Error::shape(
                    name,
                    format!("axis {ax} out of range for shape {:?}", in_shape),
                ));
            }
            mask |= 1 << ax;
        }
        if mask == 0 {
            return Err(Error::shape(name, "no axes given".to_string()));
        }
        let mut out_shape = Vec::new();
        for (i, &d) in in_shape.iter().enumerate() {
            if mask >> i & 1 == 1 {
                if keep {
                    out_shape.push(1);
                }
            } else {
                out_shape.push(d);
            }
        }
        let mut out = Tensor::zeros(&out_shape);
        reduce::reduce(self.nodes[a].value.data(), &in_shape, mask, mean, out.data_mut());
        let op = if mean {
            Op::MeanAxes { mask, keep }
        } else {
            Op::SumAxes { mask, keep }
        };
        self.push(op, vec![a], out)
    }

    pub fn sum_axes(&mut self, a: NodeId, axes: &[usize], keep: bool) -> Result<NodeId> {
        self.reduce_axes(a, axes, keep, false)
    }

    pub fn mean_axes(&mut self, a: NodeId, axes: &[usize], keep: bool) -> Result<NodeId> {
        self.reduce_axes(a, axes, keep, true)
    }

    /// Sum of all elements as a rank-0 node.
    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        let axes: Vec<usize> = (0..self.shape(a).len()).collect();
        if axes.is_empty() {
            // already rank-0
            return self.reshape(a, &[]);
        }
        self.sum_axes(a, &axes, false)
    }

    /// Mean of all elements as a rank-0 node.
    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.nodes[a].value.numel();
        let s = self.sum_all(a)?;
        self.scale(s, F::from_f64(1.0 / n as f64))
    }

    // ── Channel-vector builders (axis 1) ────────────────────────────────

    fn channel_op(
        &mut self,
        op: Op<F>,
        x: NodeId,
        v: NodeId,
        f: impl Fn(F, F) -> F,
    ) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let vs = self.shape(v).to_vec();
        if xs.len() < 2 || vs != [xs[1]] {
            return Err(Error::shape(
                op.name(),
                format!("tensor {:?} with channel vector {:?}", xs, vs),
            ));
        }
        let inner: usize = xs[2..].iter().product();
        let mut out = Tensor::zeros(&xs);
        ew::channel_zip(
            self.nodes[x].value.data(),
            self.nodes[v].value.data(),
            xs[0],
            xs[1],
            inner,
            out.data_mut(),
            f,
        );
        self.push(op, vec![x, v], out)
    }

    /// `x[n,c,..] - v[c]`.
    pub fn sub_ch(&mut self, x: NodeId, v: NodeId) -> Result<NodeId> {
        self.channel_op(Op::SubCh, x, v, |a, b| a - b)
    }

    /// `x[n,c,..] + v[c]`.
    pub fn add_ch(&mut self, x: NodeId, v: NodeId) -> Result<NodeId> {
        self.channel_op(Op::AddCh, x, v, |a, b| a + b)
    }

    /// `x[n,c,..] * v[c]`.
    pub fn mul_ch(&mut self, x: NodeId, v: NodeId) -> Result<NodeId> {
        self.channel_op(Op::MulCh, x, v, |a, b| a * b)
    }

    /// Sum over every axis except the channel axis (axis 1), yielding `(C,)`.
    pub fn sum_over_channel_complement(&mut self, x: NodeId) -> Result<NodeId> {
        let rank = self.shape(x).len();
        let axes: Vec<usize> = (0..rank).filter(|&i| i != 1).collect();
        self.sum_axes(x, &axes, false)
    }

    // ── Linear algebra builders ─────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", sa, sb),
            ));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = Tensor::zeros(&[m, n]);
        gemm::matmul(
            m,
            k,
            n,
            self.nodes[a].value.data(),
            self.nodes[b].value.data(),
            out.data_mut(),
        );
        self.push(Op::MatMul, vec![a, b], out)
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("transpose", format!("rank-2 required, got {:?}", s)));
        }
        let (r, c) = (s[0], s[1]);
        let src = self.nodes[a].value.data();
        let mut out = Tensor::zeros(&[c, r]);
        {
            let dst = out.data_mut();
            for i in 0..r {
                for j in 0..c {
                    dst[j * r + i] = src[i * c + j];
                }
            }
        }
        self.push(Op::Transpose, vec![a], out)
    }

    // ── Convolution / pooling builders ──────────────────────────────────

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, pad: usize) -> Result<NodeId> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(Error::shape(
                "conv2d",
                format!("input {:?} with filters {:?}", xs, ws),
            ));
        }
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (oc, kh, kw) = (ws[0], ws[2], ws[3]);
        let oh = conv::out_dim(h, kh, pad)
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::shape("conv2d", format!("kernel {kh} too large for height {h} with pad {pad}")))?;
        let ow = conv::out_dim(wd, kw, pad)
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::shape("conv2d", format!("kernel {kw} too large for width {wd} with pad {pad}")))?;
        let mut out = Tensor::zeros(&[n, oc, oh, ow]);
        conv::forward(
            self.nodes[x].value.data(),
            n,
            c,
            h,
            wd,
            self.nodes[w].value.data(),
            oc,
            kh,
            kw,
            pad,
            out.data_mut(),
        );
        self.push(Op::Conv2d { pad }, vec![x, w], out)
    }

    /// Adjoint of [`Graph::conv2d`] w.r.t. the input, exposed as a primitive.
    pub fn conv_input_grad(
        &mut self,
        dout: NodeId,
        w: NodeId,
        pad: usize,
        in_h: usize,
        in_w: usize,
    ) -> Result<NodeId> {
        let (ds, ws) = (self.shape(dout).to_vec(), self.shape(w).to_vec());
        if ds.len() != 4 || ws.len() != 4 || ds[1] != ws[0] {
            return Err(Error::shape(
                "conv_input_grad",
                format!("dout {:?} with filters {:?}", ds, ws),
            ));
        }
        let (oc, cin, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        let expect_oh = conv::out_dim(in_h, kh, pad).unwrap_or(0);
        let expect_ow = conv::out_dim(in_w, kw, pad).unwrap_or(0);
        if ds[2] != expect_oh || ds[3] != expect_ow {
            return Err(Error::shape(
                "conv_input_grad",
                format!(
                    "dout spatial {:?} inconsistent with input {}x{} pad {}",
                    &ds[2..], in_h, in_w, pad
                ),
            ));
        }
        let n = ds[0];
        let mut out = Tensor::zeros(&[n, cin, in_h, in_w]);
        conv::input_grad(
            self.nodes[dout].value.data(),
            n,
            oc,
            self.nodes[w].value.data(),
            cin,
            kh,
            kw,
            pad,
            in_h,
            in_w,
            out.data_mut(),
        );
        self.push(Op::ConvInputGrad { pad, in_h, in_w }, vec![dout, w], out)
    }

    /// Adjoint of [`Graph::conv2d`] w.r.t. the filters, exposed as a
    /// primitive.
    pub fn conv_weight_grad(
        &mut self,
        x: NodeId,
        dout: NodeId,
        pad: usize,
        kh: usize,
        kw: usize,
    ) -> Result<NodeId> {
        let (xs, ds) = (self.shape(x).to_vec(), self.shape(dout).to_vec());
        if xs.len() != 4 || ds.len() != 4 || xs[0] != ds[0] {
            return Err(Error::shape(
                "conv_weight_grad",
                format!("x {:?} with dout {:?}", xs, ds),
            ));
        }
        let (n, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let oc = ds[1];
        let expect_oh = conv::out_dim(h, kh, pad).unwrap_or(0);
        let expect_ow = conv::out_dim(w, kw, pad).unwrap_or(0);
        if ds[2] != expect_oh || ds[3] != expect_ow {
            return Err(Error::shape(
                "conv_weight_grad",
                format!("dout spatial {:?} inconsistent with {h}x{w} kernel {kh}x{kw} pad {pad}", &ds[2..]),
            ));
        }
        let mut out = Tensor::zeros(&[oc, cin, kh, kw]);
        conv::weight_grad(
            self.nodes[x].value.data(),
            n,
            cin,
            h,
            w,
            self.nodes[dout].value.data(),
            oc,
            kh,
            kw,
            pad,
            out.data_mut(),
        );
        self.push(Op::ConvWeightGrad { pad, kh, kw }, vec![x, dout], out)
    }

    pub fn maxpool2d(&mut self, x: NodeId, size: usize) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || size == 0 || xs[2] % size != 0 || xs[3] % size != 0 {
            return Err(Error::shape(
                "maxpool2d",
                format!("input {:?} with window {size}", xs),
            ));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let mut out = Tensor::zeros(&[n, c, h / size, w / size]);
        let mut indices = vec![0u32; out.numel()];
        pool::maxpool(self.nodes[x].value.data(), n, c, h, w, size, out.data_mut(), &mut indices);
        self.push(
            Op::MaxPool {
                size,
                indices: Arc::new(indices),
            },
            vec![x],
            out,
        )
    }

    /// Scatter of pooled values to `full_shape` at recorded argmax indices.
    pub fn max_unpool2d(
        &mut self,
        pooled: NodeId,
        indices: Arc<Vec<u32>>,
        full_shape: &[usize],
    ) -> Result<NodeId> {
        if self.nodes[pooled].value.numel() != indices.len() {
            return Err(Error::shape(
                "max_unpool2d",
                format!(
                    "{} pooled values vs {} indices",
                    self.nodes[pooled].value.numel(),
                    indices.len()
                ),
            ));
        }
        let mut out = Tensor::zeros(full_shape);
        pool::max_unpool(self.nodes[pooled].value.data(), &indices, out.data_mut());
        self.push(Op::MaxUnpool { indices }, vec![pooled], out)
    }

    /// Gather of full-size values at recorded argmax indices, yielding
    /// `pooled_shape`.
    pub fn pool_gather(
        &mut self,
        full: NodeId,
        indices: Arc<Vec<u32>>,
        pooled_shape: &[usize],
    ) -> Result<NodeId> {
        let numel: usize = pooled_shape.iter().product();
        if numel != indices.len() {
            return Err(Error::shape(
                "pool_gather",
                format!("{numel} outputs vs {} indices", indices.len()),
            ));
        }
        let mut out = Tensor::zeros(pooled_shape);
        pool::pool_gather(self.nodes[full].value.data(), &indices, out.data_mut());
        self.push(Op::PoolGather { indices }, vec![full], out)
    }

    pub fn avgpool2d(&mut self, x: NodeId, size: usize) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || size == 0 || xs[2] % size != 0 || xs[3] % size != 0 {
            return Err(Error::shape(
                "avgpool2d",
                format!("input {:?} with window {size}", xs),
            ));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let mut out = Tensor::zeros(&[n, c, h / size, w / size]);
        pool::avgpool(self.nodes[x].value.data(), n, c, h, w, size, out.data_mut());
        self.push(Op::AvgPool { size }, vec![x], out)
    }

    /// Adjoint of [`Graph::avgpool2d`]: spreads pooled values uniformly over
    /// their windows to reach `full_shape`.
    pub fn avg_unpool2d(&mut self, pooled: NodeId, size: usize, full_shape: &[usize]) -> Result<NodeId> {
        let ps = self.shape(pooled).to_vec();
        let ok = full_shape.len() == 4
            && ps.len() == 4
            && ps[0] == full_shape[0]
            && ps[1] == full_shape[1]
            && ps[2] * size == full_shape[2]
            && ps[3] * size == full_shape[3];
        if !ok {
            return Err(Error::shape(
                "avg_unpool2d",
                format!("pooled {:?} with window {size} to {:?}", ps, full_shape),
            ));
        }
        let mut out = Tensor::zeros(full_shape);
        pool::avg_unpool(
            self.nodes[pooled].value.data(),
            full_shape[0],
            full_shape[1],
            full_shape[2],
            full_shape[3],
            size,
            out.data_mut(),
        );
        self.push(Op::AvgUnpool { size }, vec![pooled], out)
    }

    // ── Channel concat / slice builders ─────────────────────────────────

    pub fn concat_ch(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let compatible = sa.len() == sb.len()
            && sa.len() >= 2
            && sa[0] == sb[0]
            && sa[2..] == sb[2..];
        if !compatible {
            return Err(Error::shape(
                "concat_channels",
                format!("{:?} with {:?}", sa, sb),
            ));
        }
        let inner: usize = sa[2..].iter().product();
        let mut shape = sa.clone();
        shape[1] = sa[1] + sb[1];
        let mut out = Tensor::zeros(&shape);
        ew::concat_channels(
            self.nodes[a].value.data(),
            sa[1],
            self.nodes[b].value.data(),
            sb[1],
            sa[0],
            inner,
            out.data_mut(),
        );
        self.push(Op::ConcatCh, vec![a, b], out)
    }

    pub fn slice_ch(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 || len == 0 || start + len > xs[1] {
            return Err(Error::shape(
                "slice_channels",
                format!("channels [{start}, {}) of {:?}", start + len, xs),
            ));
        }
        let inner: usize = xs[2..].iter().product();
        let mut shape = xs.clone();
        shape[1] = len;
        let mut out = Tensor::zeros(&shape);
        ew::slice_channels(
            self.nodes[x].value.data(),
            xs[1],
            start,
            len,
            xs[0],
            inner,
            out.data_mut(),
        );
        self.push(Op::SliceCh { start, len }, vec![x], out)
    }

    /// Embeds `x` into a zero tensor with `total` channels at offset
    /// `start` (the adjoint of [`Graph::slice_ch`]).
    pub fn embed_ch(&mut self, x: NodeId, start: usize, total: usize) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 || start + xs[1] > total {
            return Err(Error::shape(
                "embed_channels",
                format!("{:?} at channel offset {start} into {total} channels", xs),
            ));
        }
        let inner: usize = xs[2..].iter().product();
        let mut shape = xs.clone();
        shape[1] = total;
        let mut out = Tensor::zeros(&shape);
        ew::embed_channels(
            self.nodes[x].value.data(),
            xs[1],
            start,
            total,
            xs[0],
            inner,
            out.data_mut(),
        );
        self.push(Op::EmbedCh { start, total }, vec![x], out)
    }

    // ── Loss builders ───────────────────────────────────────────────────

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 {
            return Err(Error::shape("softmax", format!("rank-2 logits required, got {:?}", xs)));
        }
        let mut out = Tensor::zeros(&xs);
        ew::softmax(self.nodes[x].value.data(), xs[0], xs[1], out.data_mut());
        self.push(Op::Softmax, vec![x], out)
    }

    /// Per-example softmax cross-entropy losses, shape `(n,)`.
    pub fn softmax_cross_entropy(&mut self, x: NodeId, labels: &[u32]) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || labels.len() != xs[0] {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("logits {:?} with {} labels", xs, labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= xs[1]) {
            return Err(Error::Contract(format!(
                "label {bad} out of range for {} classes",
                xs[1]
            )));
        }
        let mut out = Tensor::zeros(&[xs[0]]);
        ew::softmax_cross_entropy(
            self.nodes[x].value.data(),
            xs[0],
            xs[1],
            labels,
            out.data_mut(),
        );
        self.push(
            Op::SoftmaxCrossEntropy {
                labels: Arc::new(labels.to_vec()),
            },
            vec![x],
            out,
        )
    }

    /// Euclidean norm of the flattened input as a rank-0 node.
    pub fn l2norm(&mut self, x: NodeId) -> Result<NodeId> {
        let acc: f64 = self.nodes[x]
            .value
            .data()
            .iter()
            .map(|v| v.as_f64() * v.as_f64())
            .sum();
        let out = Tensor::scalar(F::from_f64(acc.sqrt()));
        self.push(Op::L2Norm, vec![x], out)
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse-mode gradients of the one-element node `loss` with respect to
    /// each node in `wrt`.
    ///
    /// Gradients are materialized as new tape nodes. With
    /// `create_graph = true` they carry `requires_grad` marks inherited from
    /// their ancestors and can be differentiated again; with `false` the
    /// products are inert. Targets the loss does not reach yield
    /// zero-constant gradients.
    pub fn backward(&mut self, loss: NodeId, wrt: &[NodeId], create_graph: bool) -> Result<Gradients> {
        if self.nodes[loss].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a one-element loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let saved_marks = self.grad_marks;
        if !create_graph {
            self.grad_marks = false;
        }
        let result = self.backward_inner(loss, wrt);
        self.grad_marks = saved_marks;
        result
    }

    fn backward_inner(&mut self, loss: NodeId, wrt: &[NodeId]) -> Result<Gradients> {
        let mut want: HashMap<NodeId, ()> = HashMap::new();
        for &w in wrt {
            want.insert(w, ());
        }
        let mut grads: Vec<Option<NodeId>> = vec![None; loss + 1];
        let seed_shape = self.shape(loss).to_vec();
        let seed = self.constant(Tensor::ones(&seed_shape));
        grads[loss] = Some(seed);

        for id in (0..=loss).rev() {
            let Some(upstream) = grads[id] else { continue };
            if self.nodes[id].inputs.is_empty() {
                continue;
            }
            if !self.nodes[id].requires_grad && !self.grad_marks {
                // With grad marks suppressed nothing downstream is marked;
                // fall through and propagate anyway (marks only matter for
                // the create_graph case, where they are accurate).
            }
            let op = self.nodes[id].op.clone();
            let inputs = self.nodes[id].inputs.clone();
            let contribs = self.vjp(id, &op, &inputs, upstream)?;
            for (slot, contrib) in inputs.iter().zip(contribs.into_iter()) {
                let Some(c) = contrib else { continue };
                // Skip paths that cannot reach any differentiation target.
                if !self.nodes[*slot].requires_grad && self.grad_marks {
                    continue;
                }
                grads[*slot] = Some(match grads[*slot] {
                    None => c,
                    Some(prev) => self.add(prev, c)?,
                });
            }
            if !want.contains_key(&id) {
                grads[id] = None;
            }
        }

        let mut map = HashMap::new();
        for &w in wrt {
            let gid = match grads.get(w).copied().flatten() {
                Some(g) => g,
                None => {
                    let shape = self.shape(w).to_vec();
                    self.constant(Tensor::zeros(&shape))
                }
            };
            map.insert(w, gid);
        }
        Ok(Gradients { map })
    }

    /// Vector-Jacobian product of one node: contribution to each input's
    /// gradient, expressed as new tape nodes. `None` marks inputs that are
    /// not differentiated through (index-like arguments).
    fn vjp(
        &mut self,
        id: NodeId,
        op: &Op<F>,
        inputs: &[NodeId],
        u: NodeId,
    ) -> Result<Vec<Option<NodeId>>> {
        let g = match op {
            Op::Leaf => vec![],
            Op::Reshape => {
                let in_shape = self.shape(inputs[0]).to_vec();
                vec![Some(self.reshape(u, &in_shape)?)]
            }
            Op::Add => vec![Some(u), Some(u)],
            Op::Sub => {
                let neg = self.scale(u, F::from_f64(-1.0))?;
                vec![Some(u), Some(neg)]
            }
            Op::Mul => {
                let da = self.mul(u, inputs[1])?;
                let db = self.mul(u, inputs[0])?;
                vec![Some(da), Some(db)]
            }
            Op::Scale(c) => vec![Some(self.scale(u, *c)?)],
            Op::AddScalar(_) => vec![Some(u)],
            Op::Square => {
                let two_a = self.scale(inputs[0], F::from_f64(2.0))?;
                vec![Some(self.mul(u, two_a)?)]
            }
            Op::Sqrt => {
                // d sqrt(a) = u / (2 sqrt(a)); reuse this node's output.
                let inv = self.recip(id)?;
                let half_inv = self.scale(inv, F::from_f64(0.5))?;
                vec![Some(self.mul(u, half_inv)?)]
            }
            Op::Recip => {
                // d (1/a) = -u / a² = -u * out²
                let out_sq = self.square(id)?;
                let prod = self.mul(u, out_sq)?;
                vec![Some(self.scale(prod, F::from_f64(-1.0))?)]
            }
            Op::Relu => vec![Some(self.relu_mask_mul(inputs[0], u)?)],
            Op::ReluMaskMul => {
                // Inputs [x_ref, u_in]: the mask is constant a.e. in x_ref,
                // so only u_in receives gradient.
                let du = self.relu_mask_mul(inputs[0], u)?;
                vec![None, Some(du)]
            }
            Op::MatMul => {
                let bt = self.transpose(inputs[1])?;
                let da = self.matmul(u, bt)?;
                let at = self.transpose(inputs[0])?;
                let db = self.matmul(at, u)?;
                vec![Some(da), Some(db)]
            }
            Op::Transpose => vec![Some(self.transpose(u)?)],
            Op::ScaleByNode => {
                let (x, s) = (inputs[0], inputs[1]);
                let dx = self.scale_by(u, s)?;
                let prod = self.mul(u, x)?;
                let ds_flat = self.sum_all(prod)?;
                let s_shape = self.shape(s).to_vec();
                let ds = self.reshape(ds_flat, &s_shape)?;
                vec![Some(dx), Some(ds)]
            }
            Op::SumAxes { mask, keep } => {
                let in_shape = self.shape(inputs[0]).to_vec();
                let spread = self.spread_reduced(u, &in_shape, *mask, *keep)?;
                vec![Some(spread)]
            }
            Op::MeanAxes { mask, keep } => {
                let in_shape = self.shape(inputs[0]).to_vec();
                let count: usize = in_shape
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask >> i & 1 == 1)
                    .map(|(_, &d)| d)
                    .product();
                let spread = self.spread_reduced(u, &in_shape, *mask, *keep)?;
                vec![Some(self.scale(spread, F::from_f64(1.0 / count as f64))?)]
            }
            Op::BroadcastTo => {
                let in_shape = self.shape(inputs[0]).to_vec();
                let out_shape = self.shape(id).to_vec();
                if in_shape.is_empty() {
                    let s = self.sum_all(u)?;
                    vec![Some(s)]
                } else {
                    let axes: Vec<usize> = in_shape
                        .iter()
                        .zip(out_shape.iter())
                        .enumerate()
                        .filter(|(_, (&i, &o))| i == 1 && o != 1)
                        .map(|(ax, _)| ax)
                        .collect();
                    if axes.is_empty() {
                        vec![Some(u)]
                    } else {
                        vec![Some(self.sum_axes(u, &axes, true)?)]
                    }
                }
            }
            Op::SubCh => {
                let dv_pos = self.sum_over_channel_complement(u)?;
                let dv = self.scale(dv_pos, F::from_f64(-1.0))?;
                vec![Some(u), Some(dv)]
            }
            Op::AddCh => {
                let dv = self.sum_over_channel_complement(u)?;
                vec![Some(u), Some(dv)]
            }
            Op::MulCh => {
                let (x, v) = (inputs[0], inputs[1]);
                let dx = self.mul_ch(u, v)?;
                let prod = self.mul(u, x)?;
                let dv = self.sum_over_channel_complement(prod)?;
                vec![Some(dx), Some(dv)]
            }
            Op::Conv2d { pad } => {
                let (x, w) = (inputs[0], inputs[1]);
                let xs = self.shape(x).to_vec();
                let ws = self.shape(w).to_vec();
                let dx = self.conv_input_grad(u, w, *pad, xs[2], xs[3])?;
                let dw = self.conv_weight_grad(x, u, *pad, ws[2], ws[3])?;
                vec![Some(dx), Some(dw)]
            }
            Op::ConvInputGrad { pad, .. } => {
                // out = input_grad(dout, w): linear in both arguments.
                let (dout, w) = (inputs[0], inputs[1]);
                let ws = self.shape(w).to_vec();
                let d_dout = self.conv2d(u, w, *pad)?;
                let d_w = self.conv_weight_grad(u, dout, *pad, ws[2], ws[3])?;
                vec![Some(d_dout), Some(d_w)]
            }
            Op::ConvWeightGrad { pad, .. } => {
                // out = weight_grad(x, dout): linear in both arguments.
                let (x, dout) = (inputs[0], inputs[1]);
                let xs = self.shape(x).to_vec();
                let d_x = self.conv_input_grad(dout, u, *pad, xs[2], xs[3])?;
                let d_dout = self.conv2d(x, u, *pad)?;
                vec![Some(d_x), Some(d_dout)]
            }
            Op::MaxPool { indices, .. } => {
                let in_shape = self.shape(inputs[0]).to_vec();
                let dx = self.max_unpool2d(u, Arc::clone(indices), &in_shape)?;
                vec![Some(dx)]
            }
            Op::MaxUnpool { indices } => {
                let pooled_shape = self.shape(inputs[0]).to_vec();
                let dp = self.pool_gather(u, Arc::clone(indices), &pooled_shape)?;
                vec![Some(dp)]
            }
            Op::PoolGather { indices } => {
                let full_shape = self.shape(inputs[0]).to_vec();
                let df = self.max_unpool2d(u, Arc::clone(indices), &full_shape)?;
                vec![Some(df)]
            }
            Op::AvgPool { size } => {
                let in_shape = self.shape(inputs[0]).to_vec();
                let dx = self.avg_unpool2d(u, *size, &in_shape)?;
                vec![Some(dx)]
            }
            Op::AvgUnpool { size } => {
                vec![Some(self.avgpool2d(u, *size)?)]
            }
            Op::ConcatCh => {
                let ca = self.shape(inputs[0])[1];
                let cb = self.shape(inputs[1])[1];
                let da = self.slice_ch(u, 0, ca)?;
                let db = self.slice_ch(u, ca, cb)?;
                vec![Some(da), Some(db)]
            }
            Op::SliceCh { start, .. } => {
                let total = self.shape(inputs[0])[1];
                vec![Some(self.embed_ch(u, *start, total)?)]
            }
            Op::EmbedCh { start, .. } => {
                let len = self.shape(inputs[0])[1];
                vec![Some(self.slice_ch(u, *start, len)?)]
            }
            Op::Softmax => {
                // ds = s ⊙ u − s ⊙ Σ_row(s ⊙ u)
                let s = id;
                let su = self.mul(s, u)?;
                let row = self.sum_axes(su, &[1], true)?;
                let out_shape = self.shape(id).to_vec();
                let row_b = self.broadcast_to(row, &out_shape)?;
                let s_row = self.mul(s, row_b)?;
                vec![Some(self.sub(su, s_row)?)]
            }
            Op::SoftmaxCrossEntropy { labels } => {
                // d loss_i / d x_i = softmax(x_i) − onehot(y_i), scaled by
                // the per-example upstream value.
                let x = inputs[0];
                let xs = self.shape(x).to_vec();
                let (n, c) = (xs[0], xs[1]);
                let sm = self.softmax(x)?;
                let mut hot = Tensor::zeros(&[n, c]);
                {
                    let data = hot.data_mut();
                    for (i, &l) in labels.iter().enumerate() {
                        data[i * c + l as usize] = F::one();
                    }
                }
                let hot_id = self.constant(hot);
                let diff = self.sub(sm, hot_id)?;
                let u_col = self.reshape(u, &[n, 1])?;
                let u_b = self.broadcast_to(u_col, &[n, c])?;
                vec![Some(self.mul(diff, u_b)?)]
            }
            Op::L2Norm => {
                let norm = self.nodes[id].value.data()[0];
                let x = inputs[0];
                if norm == F::zero() {
                    // Subgradient choice at the origin: zero.
                    let shape = self.shape(x).to_vec();
                    let z = self.constant(Tensor::zeros(&shape));
                    vec![Some(z)]
                } else {
                    let inv = self.recip(id)?;
                    let factor = self.mul(u, inv)?;
                    vec![Some(self.scale_by(x, factor)?)]
                }
            }
        };
        Ok(g)
    }

    /// Expands a reduced gradient back over `in_shape` (shared by the sum and
    /// mean vjps): reshape to the keepdims form, then broadcast.
    fn spread_reduced(&mut self, u: NodeId, in_shape: &[usize], mask: u32, keep: bool) -> Result<NodeId> {
        let keep_shape: Vec<usize> = in_shape
            .iter()
            .enumerate()
            .map(|(i, &d)| if mask >> i & 1 == 1 { 1 } else { d })
            .collect();
        let shaped = if keep {
            u
        } else {
            self.reshape(u, &keep_shape)?
        };
        self.broadcast_to(shaped, in_shape)
    }
}

// ── Finite-difference verification ─────────────────────────────────────

/// Maximum relative error between analytic and central-difference gradients
/// of a scalar-valued function built with graph ops.
///
/// `build` receives a fresh graph and the id of the input leaf and must
/// return a one-element loss node. The error for coordinate `i` is
/// `|analytic_i − central_i| / max(1, |analytic_i|)`; the maximum over
/// coordinates is returned. Evaluation at a perturbed point that produces a
/// non-finite loss is reported as an error.
pub fn finite_diff_check<B>(build: B, point: &Tensor<f64>, step: f64) -> Result<f64>
where
    B: Fn(&mut Graph<f64>, NodeId) -> Result<NodeId>,
{
    // Analytic gradient.
    let mut g = Graph::<f64>::new();
    let x = g.leaf(point.clone(), true);
    let loss = build(&mut g, x)?;
    if g.value(loss).numel() != 1 {
        return Err(Error::Contract(format!(
            "finite_diff_check requires a one-element loss, got {:?}",
            g.shape(loss)
        )));
    }
    let grads = g.backward(loss, &[x], false)?;
    let analytic = g.value(grads.require(x)?).clone();

    // Central differences, one coordinate at a time.
    let eval = |p: &Tensor<f64>| -> Result<f64> {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(p.clone(), true);
        let loss = build(&mut g, x)?;
        let v = g.value(loss).item()?;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                op: "finite_diff_check".to_string(),
            });
        }
        Ok(v)
    };

    let mut max_err = 0.0f64;
    for i in 0..point.numel() {
        let mut plus = point.clone();
        plus.data_mut()[i] += step;
        let mut minus = point.clone();
        minus.data_mut()[i] -= step;
        let fd = (eval(&plus)? - eval(&minus)?) / (2.0 * step);
        let a = analytic.data()[i];
        let err = (a - fd).abs() / a.abs().max(1.0);
        if err > max_err {
            max_err = err;
        }
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_values_are_eager() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        let b = g.constant(Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap());
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn shape_mismatch_names_the_op() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::zeros(&[2]));
        let b = g.constant(Tensor::zeros(&[3]));
        let err = g.add(a, b).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("add"), "{msg}");
        assert!(msg.contains("[2]") && msg.contains("[3]"), "{msg}");
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::from_vec(&[1], vec![0.0]).unwrap());
        let err = g.recip(a).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "{err:?}");
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::<f32>::new();
        let a = g.leaf(Tensor::zeros(&[3]), true);
        let b = g.relu(a).unwrap();
        let err = g.backward(b, &[a], false).unwrap_err();
        assert!(matches!(err, Error::Contract(_)), "{err:?}");
    }

    #[test]
    fn unreachable_target_gets_zero_gradient() {
        let mut g = Graph::<f32>::new();
        let a = g.leaf(Tensor::ones(&[2]), true);
        let b = g.leaf(Tensor::ones(&[2]), true);
        let loss = g.sum_all(a).unwrap();
        let grads = g.backward(loss, &[a, b], false).unwrap();
        assert_eq!(g.value(grads.require(a).unwrap()).data(), &[1.0, 1.0]);
        assert_eq!(g.value(grads.require(b).unwrap()).data(), &[0.0, 0.0]);
    }

    #[test]
    fn gradient_accumulates_over_reuse() {
        // loss = sum(x * x_again) with x used twice: d/dx = 2x.
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::from_vec(&[2], vec![3.0, -1.5]).unwrap(), true);
        let p = g.mul(x, x).unwrap();
        let loss = g.sum_all(p).unwrap();
        let grads = g.backward(loss, &[x], false).unwrap();
        assert_eq!(g.value(grads.require(x).unwrap()).data(), &[6.0, -3.0]);
    }

    #[test]
    fn second_order_through_create_graph() {
        // y = sum(x³); dy/dx = 3x²; d(sum(dy/dx))/dx = 6x.
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::from_vec(&[2], vec![2.0, -1.0]).unwrap(), true);
        let x2 = g.square(x).unwrap();
        let x3 = g.mul(x2, x).unwrap();
        let y = g.sum_all(x3).unwrap();
        let first = g.backward(y, &[x], true).unwrap();
        let gx = first.require(x).unwrap();
        assert_eq!(g.value(gx).data(), &[12.0, 3.0]);
        let gsum = g.sum_all(gx).unwrap();
        let second = g.backward(gsum, &[x], false).unwrap();
        assert_eq!(g.value(second.require(x).unwrap()).data(), &[12.0, -6.0]);
    }

    #[test]
    fn finite_diff_check_agrees_on_composite() {
        // f(x) = ‖relu(x)‖² + sum(sqrt(x² + 1))
        let point = Tensor::from_vec(&[4], vec![0.5, -0.75, 1.25, 2.0]).unwrap();
        let err = finite_diff_check(
            |g, x| {
                let r = g.relu(x)?;
                let n = g.l2norm(r)?;
                let n2 = g.square(n)?;
                let x2 = g.square(x)?;
                let x2p = g.add_scalar(x2, 1.0)?;
                let rt = g.sqrt(x2p)?;
                let s = g.sum_all(rt)?;
                g.add(n2, s)
            },
            &point,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-3, "relative error {err}");
    }

    #[test]
    fn l2norm_at_origin_has_zero_subgradient() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::zeros(&[3]), true);
        let n = g.l2norm(x).unwrap();
        let grads = g.backward(n, &[x], false).unwrap();
        assert_eq!(g.value(grads.require(x).unwrap()).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_cross_entropy_gradient_is_softmax_minus_onehot() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::from_vec(&[1, 3], vec![0.2, -0.4, 1.1]).unwrap(), true);
        let losses = g.softmax_cross_entropy(x, &[2]).unwrap();
        let loss = g.sum_all(losses).unwrap();
        let grads = g.backward(loss, &[x], false).unwrap();
        let got = g.value(grads.require(x).unwrap()).clone();
        let sm = {
            let mut g2 = Graph::<f64>::new();
            let x2 = g2.constant(Tensor::from_vec(&[1, 3], vec![0.2, -0.4, 1.1]).unwrap());
            let s = g2.softmax(x2).unwrap();
            g2.value(s).clone()
        };
        for j in 0..3 {
            let want = sm.data()[j] - if j == 2 { 1.0 } else { 0.0 };
            assert!((got.data()[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn labels_out_of_range_are_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[2, 3]));
        assert!(g.softmax_cross_entropy(x, &[0, 3]).is_err());
    }
}
