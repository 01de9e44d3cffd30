//! Eagerly evaluated computation graph with reverse-mode gradients.
//!
//! Every op computes its value when it is added, so a graph doubles as a
//! record of one forward pass. The record can be replayed with different
//! input bindings (and at a different precision) through
//! [`Graph::evaluate`] and [`Graph::replay`].

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::GraphError;
use crate::kernels::{self, ConvGeom, PoolGeom};
use crate::sample::{Layout, SamplePlan};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub enum Op {
    /// Named leaf that must be bound on every [`Graph::evaluate`].
    Input(String),
    /// Named leaf whose recorded value is reused unless overridden.
    Param(String),
    Constant,
    /// `x [C,H,W]`, `w [O,C,k,k]`, `b [O]`
    Conv2d { stride: usize, pad: usize },
    Relu,
    MaxPool2d { size: usize, stride: usize },
    /// `a [N,K] x b [K,M]`
    MatMul,
    /// `x [N,I] x w [I,O] + b [O]`
    Affine,
    /// Softmax over the last axis of a 2-D tensor.
    Softmax,
    /// Weighted mean softmax cross-entropy of `[N,K]` logits.
    CrossEntropy {
        labels: Arc<[usize]>,
        weights: Option<Arc<[f32]>>,
    },
    /// Weighted smooth-L1 of `[N,D]` predictions, normalized by the weight sum.
    SmoothL1 {
        targets: Arc<[f32]>,
        weights: Arc<[f32]>,
        beta: f64,
    },
    BilinearSample(Arc<SamplePlan>),
    Add,
    Mul,
    Clip { lo: f64, hi: f64 },
    Sum,
    Mean,
    Reshape(Vec<usize>),
    /// Transpose of a 2-D tensor.
    Transpose,
    /// Row-wise argmax of a 2-D tensor. Piecewise constant.
    ArgmaxRows,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(_) => "param",
            Op::Constant => "constant",
            Op::Conv2d { .. } => "conv2d",
            Op::Relu => "relu",
            Op::MaxPool2d { .. } => "max_pool2d",
            Op::MatMul => "matmul",
            Op::Affine => "affine",
            Op::Softmax => "softmax",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::SmoothL1 { .. } => "smooth_l1",
            Op::BilinearSample(_) => "bilinear_sample",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::Clip { .. } => "clip",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::Reshape(_) => "reshape",
            Op::Transpose => "transpose",
            Op::ArgmaxRows => "argmax_rows",
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Op::Input(_) | Op::Param(_) | Op::Constant)
    }

    /// False for ops whose output is locally constant in their inputs.
    pub fn is_differentiable(&self) -> bool {
        !matches!(self, Op::ArgmaxRows)
    }
}

#[derive(Clone, Debug)]
struct Node<T: Real> {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor<T>,
    /// Saved softmax for cross-entropy nodes.
    aux: Option<Vec<T>>,
    requires_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    outputs: Vec<(String, NodeId)>,
}

fn mismatch(node: usize, op: &Op, detail: String) -> GraphError {
    GraphError::ShapeMismatch {
        node,
        op: op.name(),
        detail,
    }
}

/// Computes the value of `op` from its input values.
fn forward<T: Real>(node: usize, op: &Op, xs: &[&Tensor<T>]) -> Result<(Tensor<T>, Option<Vec<T>>), GraphError> {
    let err = |detail: String| mismatch(node, op, detail);
    let out = match op {
        Op::Input(_) | Op::Param(_) | Op::Constant => unreachable!("leaves have no forward"),
        Op::Conv2d { stride, pad } => {
            let (x, w, b) = (xs[0], xs[1], xs[2]);
            let (xsh, wsh) = (x.shape(), w.shape());
            if xsh.len() != 3 || wsh.len() != 4 || wsh[2] != wsh[3] || wsh[1] != xsh[0] || b.shape() != [wsh[0]] {
                return Err(err(format!("input {xsh:?}, weight {wsh:?}, bias {:?}", b.shape())));
            }
            let g = ConvGeom::new(xsh[0], xsh[1], xsh[2], wsh[0], wsh[2], *stride, *pad)
                .ok_or_else(|| err(format!("kernel {} larger than padded input {xsh:?}", wsh[2])))?;
            let data = kernels::conv2d_forward(x.data(), w.data(), b.data(), &g);
            Tensor::new(vec![g.c_out, g.h_out, g.w_out], data)?
        }
        Op::Relu => Tensor::new(
            xs[0].shape().to_vec(),
            xs[0].data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(),
        )?,
        Op::MaxPool2d { size, stride } => {
            let s = xs[0].shape();
            if s.len() != 3 {
                return Err(err(format!("expected [C,H,W], got {s:?}")));
            }
            let g = PoolGeom::new(s[0], s[1], s[2], *size, *stride).ok_or_else(|| err(format!("window {size} larger than {s:?}")))?;
            Tensor::new(vec![g.c, g.h_out, g.w_out], kernels::maxpool_forward(xs[0].data(), &g))?
        }
        Op::MatMul => {
            let (a, b) = (xs[0].shape(), xs[1].shape());
            if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
                return Err(err(format!("cannot multiply {a:?} by {b:?}")));
            }
            Tensor::new(vec![a[0], b[1]], kernels::matmul(xs[0].data(), xs[1].data(), a[0], a[1], b[1]))?
        }
        Op::Affine => {
            let (x, w, b) = (xs[0].shape(), xs[1].shape(), xs[2].shape());
            if x.len() != 2 || w.len() != 2 || x[1] != w[0] || b != [w[1]] {
                return Err(err(format!("input {x:?}, weight {w:?}, bias {b:?}")));
            }
            let mut data = kernels::matmul(xs[0].data(), xs[1].data(), x[0], x[1], w[1]);
            for row in data.chunks_mut(w[1]) {
                for (v, &bv) in row.iter_mut().zip(xs[2].data()) {
                    *v = *v + bv;
                }
            }
            Tensor::new(vec![x[0], w[1]], data)?
        }
        Op::Softmax => {
            let s = xs[0].shape();
            if s.len() != 2 {
                return Err(err(format!("expected 2-D, got {s:?}")));
            }
            Tensor::new(s.to_vec(), kernels::softmax_rows(xs[0].data(), s[1]))?
        }
        Op::CrossEntropy { labels, weights } => {
            let s = xs[0].shape();
            if s.len() != 2 || labels.len() != s[0] || weights.as_ref().is_some_and(|w| w.len() != s[0]) {
                return Err(err(format!("logits {s:?} with {} labels", labels.len())));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= s[1]) {
                return Err(err(format!("label {bad} out of range for {} classes", s[1])));
            }
            let (loss, probs) = kernels::cross_entropy(xs[0].data(), s[1], labels, weights.as_deref());
            return Ok((Tensor::scalar(T::from_f64(loss)), Some(probs)));
        }
        Op::SmoothL1 { targets, weights, beta } => {
            let s = xs[0].shape();
            if s.len() != 2 || targets.len() != xs[0].len() || weights.len() != s[0] {
                return Err(err(format!("predictions {s:?}, {} targets, {} weights", targets.len(), weights.len())));
            }
            Tensor::scalar(T::from_f64(kernels::smooth_l1_forward(xs[0].data(), s[1], targets, weights, *beta)))
        }
        Op::BilinearSample(plan) => {
            if xs[0].shape() != plan.src_shape().as_slice() {
                return Err(err(format!("source {:?} does not match plan {:?}", xs[0].shape(), plan.src_shape())));
            }
            Tensor::new(plan.out_shape(), sample_forward(plan, xs[0].data()))?
        }
        Op::Add | Op::Mul => {
            if xs[0].shape() != xs[1].shape() {
                return Err(err(format!("{:?} vs {:?}", xs[0].shape(), xs[1].shape())));
            }
            let f = |a: T, b: T| if matches!(op, Op::Add) { a + b } else { a * b };
            Tensor::new(
                xs[0].shape().to_vec(),
                xs[0].data().iter().zip(xs[1].data()).map(|(&a, &b)| f(a, b)).collect(),
            )?
        }
        Op::Clip { lo, hi } => {
            let (lo, hi) = (T::from_f64(*lo), T::from_f64(*hi));
            Tensor::new(xs[0].shape().to_vec(), xs[0].data().iter().map(|&v| v.max(lo).min(hi)).collect())?
        }
        Op::Sum => Tensor::scalar(T::from_f64(kernels::sum_f64(xs[0].data()))),
        Op::Mean => {
            if xs[0].is_empty() {
                return Err(err("mean of empty tensor".into()));
            }
            Tensor::scalar(T::from_f64(kernels::sum_f64(xs[0].data()) / xs[0].len() as f64))
        }
        Op::Reshape(shape) => xs[0]
            .clone()
            .reshaped(shape)
            .map_err(|_| err(format!("cannot reshape {:?} to {shape:?}", xs[0].shape())))?,
        Op::Transpose => {
            let s = xs[0].shape();
            if s.len() != 2 {
                return Err(err(format!("expected 2-D, got {s:?}")));
            }
            Tensor::new(vec![s[1], s[0]], transpose(xs[0].data(), s[0], s[1]))?
        }
        Op::ArgmaxRows => {
            let s = xs[0].shape();
            if s.len() != 2 || s[1] == 0 {
                return Err(err(format!("expected non-empty 2-D, got {s:?}")));
            }
            let idx = xs[0]
                .data()
                .chunks(s[1])
                .map(|row| {
                    let mut best = 0;
                    for (i, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = i;
                        }
                    }
                    T::from_f64(best as f64)
                })
                .collect();
            Tensor::new(vec![s[0]], idx)?
        }
    };
    Ok((out, None))
}

fn transpose<T: Real>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

fn sample_forward<T: Real>(plan: &SamplePlan, src: &[T]) -> Vec<T> {
    let (c_n, p_n, hw) = (plan.channels, plan.num_points(), plan.height * plan.width);
    let mut out = vec![T::zero(); c_n * p_n];
    for (p, t) in plan.taps.iter().enumerate() {
        for c in 0..c_n {
            let mut acc = T::zero();
            for k in 0..4 {
                if t.w[k] != 0.0 {
                    let s = match plan.src_layout {
                        Layout::Chw => src[c * hw + t.idx[k] as usize],
                        Layout::Hwc => src[t.idx[k] as usize * c_n + c],
                    };
                    acc = acc + T::from_f64(t.w[k] as f64) * s;
                }
            }
            let o = match plan.out_layout {
                Layout::Chw => c * p_n + p,
                Layout::Hwc => p * c_n + c,
            };
            out[o] = acc;
        }
    }
    out
}

fn sample_backward<T: Real>(plan: &SamplePlan, dout: &[T]) -> Vec<T> {
    let (c_n, p_n, hw) = (plan.channels, plan.num_points(), plan.height * plan.width);
    let mut dsrc = vec![T::zero(); c_n * hw];
    for (p, t) in plan.taps.iter().enumerate() {
        for c in 0..c_n {
            let g = match plan.out_layout {
                Layout::Chw => dout[c * p_n + p],
                Layout::Hwc => dout[p * c_n + c],
            };
            if g == T::zero() {
                continue;
            }
            for k in 0..4 {
                if t.w[k] != 0.0 {
                    let s = match plan.src_layout {
                        Layout::Chw => c * hw + t.idx[k] as usize,
                        Layout::Hwc => t.idx[k] as usize * c_n + c,
                    };
                    dsrc[s] = dsrc[s] + T::from_f64(t.w[k] as f64) * g;
                }
            }
        }
    }
    dsrc
}

/// Gradients of `op`'s inputs given the gradient of its output.
fn backward<T: Real>(
    op: &Op,
    xs: &[&Tensor<T>],
    out: &Tensor<T>,
    aux: Option<&[T]>,
    dout: &Tensor<T>,
    want: &[bool],
) -> Vec<Option<Vec<T>>> {
    let d = dout.data();
    match op {
        Op::Input(_) | Op::Param(_) | Op::Constant | Op::ArgmaxRows => vec![None; xs.len()],
        Op::Conv2d { stride, pad } => {
            let (xsh, wsh) = (xs[0].shape(), xs[1].shape());
            let g = ConvGeom::new(xsh[0], xsh[1], xsh[2], wsh[0], wsh[2], *stride, *pad).expect("validated in forward");
            let (dx, dw, db) = kernels::conv2d_backward(xs[0].data(), xs[1].data(), d, &g, want[0], want[1] || want[2]);
            vec![dx, dw.filter(|_| want[1]), db.filter(|_| want[2])]
        }
        Op::Relu => vec![Some(
            xs[0]
                .data()
                .iter()
                .zip(d)
                .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
                .collect(),
        )],
        Op::MaxPool2d { size, stride } => {
            let s = xs[0].shape();
            let g = PoolGeom::new(s[0], s[1], s[2], *size, *stride).expect("validated in forward");
            vec![Some(kernels::maxpool_backward(xs[0].data(), d, &g))]
        }
        Op::MatMul | Op::Affine => {
            let (a, b) = (xs[0].shape(), xs[1].shape());
            let (n, k, m) = (a[0], a[1], b[1]);
            let da = want[0].then(|| kernels::matmul_grad_a(d, xs[1].data(), n, k, m));
            let db = want[1].then(|| kernels::matmul_grad_b(xs[0].data(), d, n, k, m));
            let mut grads = vec![da, db];
            if matches!(op, Op::Affine) {
                grads.push(want[2].then(|| {
                    let mut gb = vec![0.0f64; m];
                    for row in d.chunks(m) {
                        for (acc, &v) in gb.iter_mut().zip(row) {
                            *acc += v.as_f64();
                        }
                    }
                    gb.into_iter().map(T::from_f64).collect()
                }));
            }
            grads
        }
        Op::Softmax => vec![Some(kernels::softmax_rows_backward(out.data(), d, xs[0].shape()[1]))],
        Op::CrossEntropy { labels, weights } => vec![Some(kernels::cross_entropy_backward(
            aux.expect("cross-entropy saves its softmax"),
            xs[0].shape()[1],
            labels,
            weights.as_deref(),
            d[0].as_f64(),
        ))],
        Op::SmoothL1 { targets, weights, beta } => vec![Some(kernels::smooth_l1_backward(
            xs[0].data(),
            xs[0].shape()[1],
            targets,
            weights,
            *beta,
            d[0].as_f64(),
        ))],
        Op::BilinearSample(plan) => vec![Some(sample_backward(plan, d))],
        Op::Add => vec![want[0].then(|| d.to_vec()), want[1].then(|| d.to_vec())],
        Op::Mul => vec![
            want[0].then(|| d.iter().zip(xs[1].data()).map(|(&g, &b)| g * b).collect()),
            want[1].then(|| d.iter().zip(xs[0].data()).map(|(&g, &a)| g * a).collect()),
        ],
        Op::Clip { lo, hi } => {
            let (lo, hi) = (T::from_f64(*lo), T::from_f64(*hi));
            vec![Some(
                xs[0]
                    .data()
                    .iter()
                    .zip(d)
                    .map(|(&x, &g)| if x >= lo && x <= hi { g } else { T::zero() })
                    .collect(),
            )]
        }
        Op::Sum => vec![Some(vec![d[0]; xs[0].len()])],
        Op::Mean => vec![Some(vec![T::from_f64(d[0].as_f64() / xs[0].len() as f64); xs[0].len()])],
        Op::Reshape(_) => vec![Some(d.to_vec())],
        Op::Transpose => {
            let s = xs[0].shape();
            vec![Some(transpose(d, s[1], s[0]))]
        }
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_leaf(&mut self, op: Op, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            inputs: Vec::new(),
            value,
            aux: None,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Named input that must be rebound on every [`Graph::evaluate`].
    pub fn input(&mut self, name: &str, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.push_leaf(Op::Input(name.to_string()), value, requires_grad)
    }

    pub fn param(&mut self, name: &str, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.push_leaf(Op::Param(name.to_string()), value, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push_leaf(Op::Constant, value, false)
    }

    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId, GraphError> {
        assert!(!op.is_leaf(), "leaves are created with input/param/constant");
        for &i in inputs {
            if i.0 >= self.nodes.len() {
                return Err(GraphError::UnknownNode(i.0));
            }
        }
        let id = self.nodes.len();
        let xs: Vec<&Tensor<T>> = inputs.iter().map(|i| &self.nodes[i.0].value).collect();
        let (value, aux) = forward(id, &op, &xs)?;
        let requires_grad = op.is_differentiable() && inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            op,
            inputs: inputs.to_vec(),
            value,
            aux,
            requires_grad,
        });
        Ok(NodeId(id))
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize) -> Result<NodeId, GraphError> {
        self.apply(Op::Conv2d { stride, pad }, &[x, w, b])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.apply(Op::Relu, &[x])
    }

    pub fn max_pool2d(&mut self, x: NodeId, size: usize, stride: usize) -> Result<NodeId, GraphError> {
        self.apply(Op::MaxPool2d { size, stride }, &[x])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.apply(Op::MatMul, &[a, b])
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.apply(Op::Affine, &[x, w, b])
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.apply(Op::Softmax, &[x])
    }

    pub fn cross_entropy(&mut self, logits: NodeId, labels: Vec<usize>, weights: Option<Vec<f32>>) -> Result<NodeId, GraphError> {
        self.apply(
            Op::CrossEntropy {
                labels: labels.into(),
                weights: weights.map(Into::into),
            },
            &[logits],
        )
    }

    pub fn smooth_l1(&mut self, pred: NodeId, targets: Vec<f32>, weights: Vec<f32>, beta: f64) -> Result<NodeId, GraphError> {
        self.apply(
            Op::SmoothL1 {
                targets: targets.into(),
                weights: weights.into(),
                beta,
            },
            &[pred],
        )
    }

    pub fn bilinear_sample(&mut self, src: NodeId, plan: Arc<SamplePlan>) -> Result<NodeId, GraphError> {
        self.apply(Op::BilinearSample(plan), &[src])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn clip(&mut self, x: NodeId, lo: f64, hi: f64) -> Result<NodeId, GraphError> {
        self.apply(Op::Clip { lo, hi }, &[x])
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.apply(Op::Sum, &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.apply(Op::Mean, &[x])
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, GraphError> {
        self.apply(Op::Reshape(shape.to_vec()), &[x])
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.apply(Op::Transpose, &[x])
    }

    pub fn argmax_rows(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.apply(Op::ArgmaxRows, &[x])
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    pub fn inputs_of(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].inputs
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Registers `id` as a named output reported by [`Graph::evaluate`].
    pub fn name_output(&mut self, name: &str, id: NodeId) {
        self.outputs.push((name.to_string(), id));
    }

    pub fn find_leaf(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| matches!(&n.op, Op::Input(s) | Op::Param(s) if s == name)).map(NodeId)
    }

    /// Re-executes the recorded ops at precision `U`.
    ///
    /// `overrides` replaces leaf values by node id; every other leaf keeps
    /// its recorded value. Op order and constants are unchanged, so the
    /// replay with no overrides reproduces the original values exactly when
    /// `U == T`.
    pub fn replay<U: Real>(&self, overrides: &HashMap<NodeId, Tensor<U>>) -> Result<Graph<U>, GraphError> {
        let mut out = Graph::<U> {
            nodes: Vec::with_capacity(self.nodes.len()),
            outputs: self.outputs.clone(),
        };
        for (i, n) in self.nodes.iter().enumerate() {
            if n.op.is_leaf() {
                let value = match overrides.get(&NodeId(i)) {
                    Some(v) => {
                        if v.shape() != n.value.shape() {
                            return Err(mismatch(i, &n.op, format!("bound {:?}, recorded {:?}", v.shape(), n.value.shape())));
                        }
                        v.clone()
                    }
                    None => n.value.cast(),
                };
                out.push_leaf(n.op.clone(), value, n.requires_grad);
            } else {
                out.apply(n.op.clone(), &n.inputs)?;
            }
        }
        Ok(out)
    }

    /// Re-runs the graph with new values for its named inputs and returns
    /// every named output.
    pub fn evaluate(&self, inputs: &HashMap<String, Tensor<T>>) -> Result<HashMap<String, Tensor<T>>, GraphError> {
        let mut overrides = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            match &n.op {
                Op::Input(name) => {
                    let v = inputs.get(name).ok_or_else(|| GraphError::UnboundInput(name.clone()))?;
                    overrides.insert(NodeId(i), v.clone());
                }
                Op::Param(name) => {
                    if let Some(v) = inputs.get(name) {
                        overrides.insert(NodeId(i), v.clone());
                    }
                }
                _ => {}
            }
        }
        let g = self.replay::<T>(&overrides)?;
        Ok(g.outputs.iter().map(|(name, id)| (name.clone(), g.value(*id).clone())).collect())
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>, GraphError> {
        let ln = self.nodes.get(loss.0).ok_or(GraphError::UnknownNode(loss.0))?;
        if !ln.value.is_scalar() {
            return Err(GraphError::NotScalar {
                node: loss.0,
                shape: ln.value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        if ln.requires_grad {
            grads[loss.0] = Some(Tensor::full(ln.value.shape(), T::one()));
        }
        for i in (0..=loss.0).rev() {
            let Some(dout) = grads[i].take() else { continue };
            let n = &self.nodes[i];
            if !n.op.is_leaf() {
                let want: Vec<bool> = n.inputs.iter().map(|j| self.nodes[j.0].requires_grad).collect();
                let xs: Vec<&Tensor<T>> = n.inputs.iter().map(|j| &self.nodes[j.0].value).collect();
                let dxs = backward(&n.op, &xs, &n.value, n.aux.as_deref(), &dout, &want);
                for ((j, dx), &w) in n.inputs.iter().zip(dxs).zip(&want) {
                    let (Some(dx), true) = (dx, w) else { continue };
                    let shape = self.nodes[j.0].value.shape();
                    let dx = Tensor::new(shape.to_vec(), dx).expect("gradient matches input shape");
                    match &mut grads[j.0] {
                        Some(acc) => acc.accumulate(&dx),
                        slot => *slot = Some(dx),
                    }
                }
            }
            grads[i] = Some(dout);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

/// Result of [`Graph::backward`].
#[derive(Clone, Debug)]
pub struct Gradients<T: Real = f32> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to any node; all zeros when the
    /// node does not influence the loss.
    pub fn get(&self, id: NodeId) -> Tensor<T> {
        match self.grads.get(id.0) {
            Some(Some(g)) => g.clone(),
            _ => Tensor::zeros(&self.shapes[id.0]),
        }
    }

    pub fn get_ref(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }
}
