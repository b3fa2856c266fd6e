//! Define-by-run autodiff tape.
//!
//! A [`Tape`] is rebuilt for every forward pass. Operations append nodes in
//! topological order (inputs always precede outputs), so [`Tape::backward`]
//! is a single reverse sweep applying each op's local rule. One backward pass
//! per tape: a second call without a fresh forward is an error.

use super::kernels::ConvDims;
use super::{strides, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Forward semantics of the spike nonlinearity.
///
/// `Hard` is the real model: a Heaviside step. `Smooth` replaces it with the
/// clipped linear ramp whose exact derivative is the rectangular surrogate
/// window, which makes finite-difference gradient checks well-defined. The
/// backward rule is the same rectangular window in both modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpikeMode {
    Hard,
    Smooth,
}

pub(crate) enum Op<T: Scalar> {
    Leaf,
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Affine { x: Var, mul: T },
    Matmul { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize },
    Conv2d { x: Var, w: Var, b: Var, dims: ConvDims },
    GlobalAvgPool { x: Var },
    Sigmoid { x: Var },
    Relu { x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, mean: Vec<T>, rstd: Vec<T> },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<T> },
    SpikeSurrogate { v: Var, v_th: T, width: T },
    Reshape { x: Var },
    RowSelect { x: Var, row: usize },
    SumAll { x: Var },
}

impl<T: Scalar> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Affine { .. } => "affine",
            Op::Matmul { .. } => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Relu { .. } => "relu",
            Op::LayerNorm { .. } => "layer_norm",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::SpikeSurrogate { .. } => "spike_surrogate",
            Op::Reshape { .. } => "reshape",
            Op::RowSelect { .. } => "row_select",
            Op::SumAll { .. } => "sum_all",
        }
    }
}

pub(crate) struct Node<T: Scalar> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    /// Leaf marked as a trainable parameter.
    pub requires_grad: bool,
    /// True when some requires_grad leaf feeds this node.
    pub on_grad_path: bool,
    pub grad: Option<Vec<T>>,
}

/// Recording of one forward pass.
pub struct Tape<T: Scalar> {
    pub(crate) nodes: Vec<Node<T>>,
    consumed: bool,
    spike_mode: SpikeMode,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), consumed: false, spike_mode: SpikeMode::Hard }
    }

    pub fn set_spike_mode(&mut self, mode: SpikeMode) {
        self.spike_mode = mode;
    }

    pub fn spike_mode(&self) -> SpikeMode {
        self.spike_mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record an input tensor. Gradients accumulate for it only when the
    /// tensor was marked `requires_grad`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        let rg = t.requires_grad();
        self.push_node(t.clone(), Op::Leaf, rg, rg)
    }

    /// Record a constant input; never accumulates gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push_node(t, Op::Leaf, false, false)
    }

    /// Record an input with gradient tracking off regardless of its flag.
    pub fn leaf_frozen(&mut self, t: &Tensor<T>) -> Var {
        self.push_node(t.clone(), Op::Leaf, false, false)
    }

    pub(crate) fn push_node(
        &mut self,
        value: Tensor<T>,
        op: Op<T>,
        requires_grad: bool,
        on_grad_path: bool,
    ) -> Var {
        self.nodes.push(Node { value, op, requires_grad, on_grad_path, grad: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub(crate) fn on_grad_path(&self, v: Var) -> bool {
        self.nodes[v.0].on_grad_path
    }

    /// Gradient of a node, present after [`backward`](Self::backward) for
    /// every node on the gradient path.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Scan forward for the first node holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.nodes
            .iter()
            .enumerate()
            .find(|(_, n)| n.value.data().iter().any(|v| !v.is_finite()))
            .map(|(i, n)| (i, n.op.name()))
    }

    /// Reverse sweep accumulating `d loss / d node` into every node on the
    /// gradient path. `loss` must be scalar. Consumes the tape's single
    /// backward budget; requires_grad leaves disconnected from the loss end
    /// up with zero gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Tape(
                "tape already consumed by a previous backward; run a new forward pass".into(),
            ));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Tape(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.consumed = true;

        if self.nodes[loss.0].on_grad_path {
            self.nodes[loss.0].grad = Some(vec![T::one()]);
            for i in (0..self.nodes.len()).rev() {
                if self.nodes[i].grad.is_none() {
                    continue;
                }
                let g = self.nodes[i].grad.take().expect("checked above");
                let contributions = self.input_grads(i, &g);
                self.nodes[i].grad = Some(g);
                for (var, contrib) in contributions {
                    self.accumulate(var, contrib);
                }
            }
        }

        for node in &mut self.nodes {
            if node.requires_grad && node.grad.is_none() {
                node.grad = Some(vec![T::zero(); node.value.numel()]);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contrib: Vec<T>) {
        let node = &mut self.nodes[v.0];
        debug_assert_eq!(contrib.len(), node.value.numel());
        match &mut node.grad {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contrib) {
                    *gi += ci;
                }
            }
            None => node.grad = Some(contrib),
        }
    }

    /// Local backward rule of node `i` given its output gradient.
    fn input_grads(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        use super::ops::{reduce_weighted, Weight};
        let node = &self.nodes[i];
        let out_shape = node.value.shape();
        let mut out = Vec::new();
        let mut want = |v: Var| self.nodes[v.0].on_grad_path;
        match &node.op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                if want(*a) {
                    let sa = self.nodes[a.0].value.shape();
                    out.push((*a, reduce_weighted(g, out_shape, Weight::None::<T>, sa)));
                }
                if want(*b) {
                    let sb = self.nodes[b.0].value.shape();
                    out.push((*b, reduce_weighted(g, out_shape, Weight::None::<T>, sb)));
                }
            }
            Op::Mul { a, b } => {
                if want(*a) {
                    let bv = &self.nodes[b.0].value;
                    let sa = self.nodes[a.0].value.shape();
                    out.push((
                        *a,
                        reduce_weighted(g, out_shape, Weight::Some(bv.data(), bv.shape()), sa),
                    ));
                }
                if want(*b) {
                    let av = &self.nodes[a.0].value;
                    let sb = self.nodes[b.0].value.shape();
                    out.push((
                        *b,
                        reduce_weighted(g, out_shape, Weight::Some(av.data(), av.shape()), sb),
                    ));
                }
            }
            Op::Affine { x, mul } => {
                if want(*x) {
                    out.push((*x, g.iter().map(|&gi| gi * *mul).collect()));
                }
            }
            Op::Matmul { a, b, batch, m, k, n } => {
                use super::kernels;
                if want(*a) {
                    let bv = self.nodes[b.0].value.data();
                    out.push((*a, kernels::matmul_backward_a(g, bv, *batch, *m, *k, *n)));
                }
                if want(*b) {
                    let av = self.nodes[a.0].value.data();
                    out.push((*b, kernels::matmul_backward_b(g, av, *batch, *m, *k, *n)));
                }
            }
            Op::Conv2d { x, w, b, dims } => {
                use super::kernels;
                if want(*x) {
                    let wv = self.nodes[w.0].value.data();
                    out.push((*x, kernels::conv2d_backward_x(g, wv, dims)));
                }
                if want(*w) {
                    let xv = self.nodes[x.0].value.data();
                    out.push((*w, kernels::conv2d_backward_w(g, xv, dims)));
                }
                if want(*b) {
                    out.push((*b, kernels::conv2d_backward_b(g, dims)));
                }
            }
            Op::GlobalAvgPool { x } => {
                if want(*x) {
                    let xs = self.nodes[x.0].value.shape();
                    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                    let inv = T::one() / T::from_f64((h * w) as f64);
                    let mut dx = vec![T::zero(); n * c * h * w];
                    for nc in 0..n * c {
                        let gi = g[nc] * inv;
                        for p in 0..h * w {
                            dx[nc * h * w + p] = gi;
                        }
                    }
                    out.push((*x, dx));
                }
            }
            Op::Sigmoid { x } => {
                if want(*x) {
                    let y = node.value.data();
                    out.push((
                        *x,
                        g.iter()
                            .zip(y)
                            .map(|(&gi, &yi)| gi * yi * (T::one() - yi))
                            .collect(),
                    ));
                }
            }
            Op::Relu { x } => {
                if want(*x) {
                    let xv = self.nodes[x.0].value.data();
                    out.push((
                        *x,
                        g.iter()
                            .zip(xv)
                            .map(|(&gi, &xi)| if xi > T::zero() { gi } else { T::zero() })
                            .collect(),
                    ));
                }
            }
            Op::LayerNorm { x, gamma, beta, mean, rstd } => {
                let xv = self.nodes[x.0].value.data();
                let xs = self.nodes[x.0].value.shape();
                let gv = self.nodes[gamma.0].value.data();
                let c = xs[1];
                let inner: usize = xs[2..].iter().product();
                let n_outer = xs[0];
                let inv_c = T::one() / T::from_f64(c as f64);

                let mut dx = vec![T::zero(); xv.len()];
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for o in 0..n_outer {
                    for p in 0..inner {
                        let pos = o * inner + p;
                        let (mu, r) = (mean[pos], rstd[pos]);
                        // First pass: channel means of dxhat and dxhat*xhat.
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for ch in 0..c {
                            let idx = (o * c + ch) * inner + p;
                            let xhat = (xv[idx] - mu) * r;
                            let dxhat = g[idx] * gv[ch];
                            s1 += dxhat;
                            s2 += dxhat * xhat;
                        }
                        s1 = s1 * inv_c;
                        s2 = s2 * inv_c;
                        for ch in 0..c {
                            let idx = (o * c + ch) * inner + p;
                            let xhat = (xv[idx] - mu) * r;
                            let dxhat = g[idx] * gv[ch];
                            dx[idx] = r * (dxhat - s1 - xhat * s2);
                            dgamma[ch] += g[idx] * xhat;
                            dbeta[ch] += g[idx];
                        }
                    }
                }
                if want(*x) {
                    out.push((*x, dx));
                }
                if want(*gamma) {
                    out.push((*gamma, dgamma));
                }
                if want(*beta) {
                    out.push((*beta, dbeta));
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                if want(*logits) {
                    let k = self.nodes[logits.0].value.shape()[1];
                    let inv_n = T::one() / T::from_f64(labels.len() as f64);
                    let scale = g[0] * inv_n;
                    let mut dl = vec![T::zero(); probs.len()];
                    for (n, &label) in labels.iter().enumerate() {
                        for j in 0..k {
                            let delta = if j == label { T::one() } else { T::zero() };
                            dl[n * k + j] = (probs[n * k + j] - delta) * scale;
                        }
                    }
                    out.push((*logits, dl));
                }
            }
            Op::SpikeSurrogate { v, v_th, width } => {
                if want(*v) {
                    let vv = self.nodes[v.0].value.data();
                    let half = *width / T::from_f64(2.0);
                    let inv = T::one() / *width;
                    out.push((
                        *v,
                        g.iter()
                            .zip(vv)
                            .map(|(&gi, &vi)| {
                                if (vi - *v_th).abs() < half {
                                    gi * inv
                                } else {
                                    T::zero()
                                }
                            })
                            .collect(),
                    ));
                }
            }
            Op::Reshape { x } => {
                if want(*x) {
                    out.push((*x, g.to_vec()));
                }
            }
            Op::RowSelect { x, row } => {
                if want(*x) {
                    let xs = self.nodes[x.0].value.shape();
                    let cols = xs[1];
                    let mut dt = vec![T::zero(); xs[0] * cols];
                    dt[row * cols..(row + 1) * cols].copy_from_slice(g);
                    out.push((*x, dt));
                }
            }
            Op::SumAll { x } => {
                if want(*x) {
                    let numel = self.nodes[x.0].value.numel();
                    out.push((*x, vec![g[0]; numel]));
                }
            }
        }
        out
    }
}

/// Flat index into `shape` for the coordinates of `idx` in `out_shape`,
/// treating size-1 dims of `shape` as broadcast (stride 0). `shape` is
/// right-aligned against `out_shape`.
pub(crate) fn broadcast_source_index(
    idx: usize,
    out_shape: &[usize],
    shape: &[usize],
) -> usize {
    let ndim = out_shape.len();
    let offset = ndim - shape.len();
    let src_strides = strides(shape);
    let mut rem = idx;
    let mut flat = 0;
    for d in (0..ndim).rev() {
        let coord = rem % out_shape[d];
        rem /= out_shape[d];
        if d >= offset && shape[d - offset] != 1 {
            flat += coord * src_strides[d - offset];
        }
    }
    flat
}
