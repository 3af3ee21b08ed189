//! Dynamic reverse-mode tape.
//!
//! Every forward op appends one node holding its output value and whatever it
//! needs for the backward pass. Nodes are appended in evaluation order, so the
//! node list is already a topological order and [`Tape::backward`] simply walks
//! it in reverse. A tape is consumed by one backward pass.

use std::collections::HashMap;

use rand::Rng;

use super::kernels;
use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Kind of a recorded operation, used for reporting and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    MatMulT,
    Add,
    AddBias,
    Mul,
    Scale,
    Sum,
    Softmax,
    RmsNorm,
    Gelu,
    Gather,
    Dropout,
    Attention,
    NllLoss,
}

impl OpKind {
    pub const DIFFERENTIABLE: [OpKind; 14] = [
        OpKind::MatMul,
        OpKind::MatMulT,
        OpKind::Add,
        OpKind::AddBias,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::Sum,
        OpKind::Softmax,
        OpKind::RmsNorm,
        OpKind::Gelu,
        OpKind::Gather,
        OpKind::Dropout,
        OpKind::Attention,
        OpKind::NllLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::MatMulT => "matmul_t",
            OpKind::Add => "add",
            OpKind::AddBias => "add_bias",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::Sum => "sum",
            OpKind::Softmax => "softmax",
            OpKind::RmsNorm => "rms_norm",
            OpKind::Gelu => "gelu",
            OpKind::Gather => "embedding_lookup",
            OpKind::Dropout => "dropout",
            OpKind::Attention => "attention",
            OpKind::NllLoss => "nll_loss",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::DIFFERENTIABLE.into_iter().find(|k| k.name() == name)
    }
}

/// Geometry of a batched multi-head attention call.
///
/// Activations are laid out as `(batch·seq_len) × d_model`, heads taking
/// contiguous column blocks of width `d_model / heads`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionShape {
    pub batch: usize,
    pub seq_len: usize,
    pub heads: usize,
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    RmsNorm {
        x: Var,
        weight: Var,
        inv_rms: Vec<T>,
    },
    Gelu(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
        mask: Vec<bool>,
        probs: Vec<T>,
    },
    NllLoss {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::MatMulT(..) => OpKind::MatMulT,
            Op::Add(..) => OpKind::Add,
            Op::AddBias(..) => OpKind::AddBias,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Sum(..) => OpKind::Sum,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::RmsNorm { .. } => OpKind::RmsNorm,
            Op::Gelu(..) => OpKind::Gelu,
            Op::Gather { .. } => OpKind::Gather,
            Op::Dropout { .. } => OpKind::Dropout,
            Op::Attention { .. } => OpKind::Attention,
            Op::NllLoss { .. } => OpKind::NllLoss,
        }
    }
}

struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a computation for one backward pass.
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
    params: HashMap<String, Var>,
    consumed: bool,
    fault: Option<OpKind>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T: Element = f32> {
    grads: Vec<Option<Vec<T>>>,
    params: HashMap<String, Var>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of the loss with respect to a leaf; `None` when the leaf does
    /// not require grad or the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0)?.as_deref()
    }

    /// Gradient for a parameter bound through [`Tape::param`].
    pub fn named(&self, name: &str) -> Option<&[T]> {
        self.params.get(name).and_then(|&v| self.wrt(v))
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }
}

fn add_into<T: Element>(slot: &mut Option<Vec<T>>, contrib: Vec<T>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(contrib).for_each(|(a, b)| *a += b),
        None => *slot = Some(contrib),
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
            consumed: false,
            fault: None,
        }
    }

    /// Deliberately scales the upstream gradient of every `kind` node by 1.5
    /// during backward. Exists only so gradient checks can prove they detect
    /// a broken backward rule.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn op_kind(&self, var: Var) -> OpKind {
        self.nodes[var.0].op.kind()
    }

    /// Records a leaf. Its data is copied onto the tape; any gradient the
    /// tensor carries is ignored.
    pub fn leaf(&mut self, tensor: Tensor<T>, requires_grad: bool) -> Var {
        let mut value = tensor;
        value.clear_grad();
        value.set_requires_grad(false);
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor, false)
    }

    /// Binds a named model parameter as a leaf, honoring its `requires_grad`
    /// flag. Binding the same name twice returns the existing leaf.
    pub fn param(&mut self, name: &str, tensor: &Tensor<f32>) -> Var {
        if let Some(&var) = self.params.get(name) {
            return var;
        }
        let var = self.leaf(tensor.cast(), tensor.requires_grad());
        self.params.insert(name.to_owned(), var);
        var
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        let kind = op.kind();
        if !value.all_finite() {
            return Err(Error::NonFinite { op: kind.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn matrix_dims(&self, op: &'static str, var: Var) -> Result<(usize, usize)> {
        let shape = self.shape(var);
        if shape.len() != 2 {
            return Err(Error::Contract(format!(
                "{op} expects a 2-D tensor, got shape {shape:?}"
            )));
        }
        Ok((shape[0], shape[1]))
    }

    /// `a·b` for `a: m×k`, `b: k×n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(a), self.shape(b)));
        }
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Tensor::new([m, n], out)?, Op::MatMul(a, b), &[a, b])
    }

    /// `a·bᵀ` for `a: m×k`, `b: n×k`; the layout of a linear layer whose
    /// weight is stored `out × in`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul_t", a)?;
        let (n, k2) = self.matrix_dims("matmul_t", b)?;
        if k != k2 {
            return Err(Error::dim("matmul_t", self.shape(a), self.shape(b)));
        }
        let out = kernels::matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Tensor::new([m, n], out)?, Op::MatMulT(a, b), &[a, b])
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        self.push(out, Op::Add(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    /// Adds a length-`d` vector to every row of an `n×d` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, d) = self.matrix_dims("add_bias", x)?;
        if self.shape(bias) != [d] {
            return Err(Error::dim("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(d) {
            row.iter_mut().zip(&b).for_each(|(v, &bv)| *v += bv);
        }
        self.push(out, Op::AddBias(x, bias), &[x, bias])
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= s);
        self.push(out, Op::Scale(x, s), &[x])
    }

    /// Sum of all elements, as a 1-element tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total: T = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::Sum(x), &[x])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Index {
                op: "softmax",
                msg: format!("axis {axis} out of range for shape {shape:?}"),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let len = shape[axis];
        let mut out = self.value(x).clone();
        kernels::softmax_strided(out.data_mut(), outer, len, inner);
        self.push(out, Op::Softmax { x, outer, len, inner }, &[x])
    }

    /// `weight ⊙ x / sqrt(mean(x²) + eps)` over the trailing dimension.
    pub fn rms_norm(&mut self, x: Var, weight: Var, eps: f64) -> Result<Var> {
        if eps.is_nan() || eps < 0.0 {
            return Err(Error::Contract(format!("rms_norm eps must be >= 0, got {eps}")));
        }
        let d = self.value(x).cols();
        if self.shape(weight) != [d] {
            return Err(Error::dim("rms_norm", self.shape(x), self.shape(weight)));
        }
        let w = self.value(weight).data().to_vec();
        let eps = T::from_f64(eps);
        let dn = T::from_f64(d as f64);
        let mut out = self.value(x).clone();
        let mut inv_rms = Vec::with_capacity(out.rows());
        for row in out.data_mut().chunks_mut(d) {
            let ms = row.iter().map(|&v| v * v).sum::<T>() / dn;
            let r = T::one() / (ms + eps).sqrt();
            inv_rms.push(r);
            row.iter_mut().zip(&w).for_each(|(v, &wv)| *v = wv * *v * r);
        }
        self.push(out, Op::RmsNorm { x, weight, inv_rms }, &[x, weight])
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = kernels::gelu(*v));
        self.push(out, Op::Gelu(x), &[x])
    }

    /// Row gather: output row `i` is row `ids[i]` of `table`. Used for token
    /// and position embeddings and for last-token pooling.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, d) = self.matrix_dims("embedding_lookup", table)?;
        if ids.is_empty() {
            return Err(Error::Contract("embedding_lookup with no ids".into()));
        }
        if let Some((pos, &id)) = ids.iter().enumerate().find(|(_, &id)| id >= vocab) {
            return Err(Error::Index {
                op: "embedding_lookup",
                msg: format!("id {id} at position {pos} is outside [0, {vocab})"),
            });
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let out = Tensor::new([ids.len(), d], out)?;
        self.push(out, Op::Gather { table, ids: ids.to_vec() }, &[table])
    }

    /// Inverted dropout: zeroes each element with probability `p` and scales
    /// survivors by `1/(1-p)`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Contract(format!("dropout probability {p} not in [0, 1)")));
        }
        let keep = T::from_f64(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().zip(&mask).for_each(|(v, &m)| *v *= m);
        self.push(out, Op::Dropout { x, mask }, &[x])
    }

    /// Scaled dot-product attention over `heads` heads.
    ///
    /// `mask` is `batch × seq_len × seq_len`; entry `(b, i, j)` says whether
    /// query `i` may attend to key `j` in sequence `b`. A query with no allowed
    /// key produces a zero output row.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
        mask: Vec<bool>,
    ) -> Result<Var> {
        let (rows, d) = self.matrix_dims("attention", q)?;
        let AttentionShape { batch, seq_len, heads } = shape;
        if rows != batch * seq_len || self.shape(k) != [rows, d] || self.shape(v) != [rows, d] {
            return Err(Error::dim("attention", self.shape(q), self.shape(k)));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Contract(format!("d_model {d} not divisible by {heads} heads")));
        }
        if mask.len() != batch * seq_len * seq_len {
            return Err(Error::dim("attention mask", &[batch, seq_len, seq_len], &[mask.len()]));
        }
        let hd = d / heads;
        let scale = T::from_f64(1.0 / (hd as f64).sqrt());
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![T::zero(); batch * heads * seq_len * seq_len];
        let mut out = vec![T::zero(); rows * d];
        for b in 0..batch {
            for h in 0..heads {
                let col = h * hd;
                for i in 0..seq_len {
                    let qi = &qd[(b * seq_len + i) * d + col..][..hd];
                    let allowed = &mask[(b * seq_len + i) * seq_len..][..seq_len];
                    let p = &mut probs[((b * heads + h) * seq_len + i) * seq_len..][..seq_len];
                    let mut max = T::neg_infinity();
                    for j in (0..seq_len).filter(|&j| allowed[j]) {
                        let kj = &kd[(b * seq_len + j) * d + col..][..hd];
                        let s = qi.iter().zip(kj).map(|(&a, &c)| a * c).sum::<T>() * scale;
                        p[j] = s;
                        max = max.max(s);
                    }
                    if max == T::neg_infinity() {
                        continue;
                    }
                    let mut total = T::zero();
                    for j in (0..seq_len).filter(|&j| allowed[j]) {
                        p[j] = (p[j] - max).exp();
                        total += p[j];
                    }
                    let oi = &mut out[(b * seq_len + i) * d + col..][..hd];
                    for j in (0..seq_len).filter(|&j| allowed[j]) {
                        p[j] = p[j] / total;
                        let vj = &vd[(b * seq_len + j) * d + col..][..hd];
                        oi.iter_mut().zip(vj).for_each(|(o, &vv)| *o += p[j] * vv);
                    }
                }
            }
        }
        let out = Tensor::new([rows, d], out)?;
        self.push(out, Op::Attention { q, k, v, shape, mask, probs }, &[q, k, v])
    }

    /// Mean negative log-likelihood of `targets` under `softmax(logits)`,
    /// computed through log-sum-exp.
    pub fn nll_loss(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (batch, classes) = self.matrix_dims("nll_loss", logits)?;
        if targets.len() != batch {
            return Err(Error::dim("nll_loss", self.shape(logits), &[targets.len()]));
        }
        if let Some((pos, &t)) = targets.iter().enumerate().find(|(_, &t)| t >= classes) {
            return Err(Error::Index {
                op: "nll_loss",
                msg: format!("target {t} at position {pos} is outside [0, {classes})"),
            });
        }
        let data = self.value(logits).data();
        let mut probs = Vec::with_capacity(batch * classes);
        let mut total = T::zero();
        for (row, &t) in data.chunks(classes).zip(targets) {
            let lse = kernels::log_sum_exp(row);
            total += lse - row[t];
            probs.extend(row.iter().map(|&v| (v - lse).exp()));
        }
        let loss = total / T::from_f64(batch as f64);
        let op = Op::NllLoss {
            logits,
            targets: targets.to_vec(),
            probs,
        };
        self.push(Tensor::scalar(loss), op, &[logits])
    }

    /// Back-propagates from a scalar `loss`, returning the gradient of every
    /// leaf that requires grad. Consumes the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::State("backward already ran on this tape".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(mut upstream) = grads[idx].take() else {
                continue;
            };
            if self.fault == Some(node.op.kind()) {
                let bump = T::from_f64(1.5);
                upstream.iter_mut().for_each(|g| *g *= bump);
            }
            for (input, contrib) in self.local_grads(idx, &upstream) {
                if self.nodes[input.0].requires_grad {
                    add_into(&mut grads[input.0], contrib);
                }
            }
        }
        // Only leaf gradients are reported.
        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                *slot = None;
            }
        }
        Ok(Gradients {
            grads,
            params: std::mem::take(&mut self.params),
        })
    }

    /// Vector-Jacobian products of node `idx` for each input that needs one.
    fn local_grads(&self, idx: usize, dy: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[idx];
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = (self.value(a).rows(), self.value(a).cols());
                let n = self.value(b).cols();
                if wants(a) {
                    // dA = dY·Bᵀ
                    out.push((a, kernels::matmul_nt(dy, val(b), m, n, k)));
                }
                if wants(b) {
                    // dB = Aᵀ·dY
                    out.push((b, kernels::matmul_tn(val(a), dy, m, k, n)));
                }
            }
            &Op::MatMulT(a, b) => {
                let (m, k) = (self.value(a).rows(), self.value(a).cols());
                let n = self.value(b).rows();
                if wants(a) {
                    // dA = dY·B
                    out.push((a, kernels::matmul(dy, val(b), m, n, k)));
                }
                if wants(b) {
                    // dB = dYᵀ·A
                    out.push((b, kernels::matmul_tn(dy, val(a), m, n, k)));
                }
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    if wants(v) {
                        out.push((v, dy.to_vec()));
                    }
                }
            }
            &Op::Mul(a, b) => {
                if wants(a) {
                    out.push((a, dy.iter().zip(val(b)).map(|(&g, &y)| g * y).collect()));
                }
                if wants(b) {
                    out.push((b, dy.iter().zip(val(a)).map(|(&g, &x)| g * x).collect()));
                }
            }
            &Op::AddBias(x, bias) => {
                if wants(x) {
                    out.push((x, dy.to_vec()));
                }
                if wants(bias) {
                    let d = self.value(bias).numel();
                    let mut db = vec![T::zero(); d];
                    for row in dy.chunks(d) {
                        db.iter_mut().zip(row).for_each(|(a, &g)| *a += g);
                    }
                    out.push((bias, db));
                }
            }
            &Op::Scale(x, s) => {
                out.push((x, dy.iter().map(|&g| g * s).collect()));
            }
            &Op::Sum(x) => {
                out.push((x, vec![dy[0]; self.value(x).numel()]));
            }
            &Op::Softmax { x, outer, len, inner } => {
                let y = node.value.data();
                let mut dx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| o * len * inner + i + j * inner;
                        let dot: T = (0..len).map(|j| y[at(j)] * dy[at(j)]).sum();
                        for j in 0..len {
                            dx[at(j)] = y[at(j)] * (dy[at(j)] - dot);
                        }
                    }
                }
                out.push((x, dx));
            }
            Op::RmsNorm { x, weight, inv_rms } => {
                let (x, weight) = (*x, *weight);
                let xs = val(x);
                let w = val(weight);
                let d = w.len();
                let dn = T::from_f64(d as f64);
                if wants(x) {
                    let mut dx = vec![T::zero(); xs.len()];
                    for (r, (&ir, (xr, gr))) in inv_rms
                        .iter()
                        .zip(xs.chunks(d).zip(dy.chunks(d)))
                        .enumerate()
                    {
                        let dot: T = (0..d).map(|j| w[j] * gr[j] * xr[j]).sum();
                        let c = ir * ir * ir * dot / dn;
                        for j in 0..d {
                            dx[r * d + j] = ir * w[j] * gr[j] - c * xr[j];
                        }
                    }
                    out.push((x, dx));
                }
                if wants(weight) {
                    let mut dw = vec![T::zero(); d];
                    for (&ir, (xr, gr)) in inv_rms.iter().zip(xs.chunks(d).zip(dy.chunks(d))) {
                        for j in 0..d {
                            dw[j] += gr[j] * xr[j] * ir;
                        }
                    }
                    out.push((weight, dw));
                }
            }
            &Op::Gelu(x) => {
                let dx = dy
                    .iter()
                    .zip(val(x))
                    .map(|(&g, &xv)| g * kernels::gelu_grad(xv))
                    .collect();
                out.push((x, dx));
            }
            Op::Gather { table, ids } => {
                let d = self.value(*table).cols();
                let mut dt = vec![T::zero(); self.value(*table).numel()];
                for (row, &id) in dy.chunks(d).zip(ids) {
                    dt[id * d..(id + 1) * d]
                        .iter_mut()
                        .zip(row)
                        .for_each(|(a, &g)| *a += g);
                }
                out.push((*table, dt));
            }
            Op::Dropout { x, mask } => {
                out.push((*x, dy.iter().zip(mask).map(|(&g, &m)| g * m).collect()));
            }
            Op::Attention { q, k, v, shape, mask, probs } => {
                let (dq, dk, dv) = self.attention_backward(*q, *k, *v, *shape, mask, probs, dy);
                for (var, g) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if wants(var) {
                        out.push((var, g));
                    }
                }
            }
            Op::NllLoss { logits, targets, probs } => {
                let classes = self.value(*logits).cols();
                let scale = dy[0] / T::from_f64(targets.len() as f64);
                let mut dl = probs.clone();
                for (row, &t) in dl.chunks_mut(classes).zip(targets) {
                    row[t] -= T::one();
                    row.iter_mut().for_each(|g| *g *= scale);
                }
                out.push((*logits, dl));
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
        mask: &[bool],
        probs: &[T],
        dy: &[T],
    ) -> (Vec<T>, Vec<T>, Vec<T>) {
        let AttentionShape { batch, seq_len, heads } = shape;
        let d = self.value(q).cols();
        let hd = d / heads;
        let scale = T::from_f64(1.0 / (hd as f64).sqrt());
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut dq = vec![T::zero(); qd.len()];
        let mut dk = vec![T::zero(); kd.len()];
        let mut dv = vec![T::zero(); vd.len()];
        let mut dp = vec![T::zero(); seq_len];
        for b in 0..batch {
            for h in 0..heads {
                let col = h * hd;
                let at = |pos: usize| (b * seq_len + pos) * d + col;
                for i in 0..seq_len {
                    let allowed = &mask[(b * seq_len + i) * seq_len..][..seq_len];
                    let p = &probs[((b * heads + h) * seq_len + i) * seq_len..][..seq_len];
                    let gi = &dy[at(i)..][..hd];
                    let mut row_dot = T::zero();
                    for j in (0..seq_len).filter(|&j| allowed[j]) {
                        let vj = &vd[at(j)..][..hd];
                        dp[j] = gi.iter().zip(vj).map(|(&g, &vv)| g * vv).sum();
                        row_dot += p[j] * dp[j];
                        dv[at(j)..][..hd]
                            .iter_mut()
                            .zip(gi)
                            .for_each(|(a, &g)| *a += p[j] * g);
                    }
                    for j in (0..seq_len).filter(|&j| allowed[j]) {
                        let ds = p[j] * (dp[j] - row_dot) * scale;
                        let (qi, kj) = (&qd[at(i)..][..hd], &kd[at(j)..][..hd]);
                        dq[at(i)..][..hd].iter_mut().zip(kj).for_each(|(a, &kv)| *a += ds * kv);
                        dk[at(j)..][..hd].iter_mut().zip(qi).for_each(|(a, &qv)| *a += ds * qv);
                    }
                }
            }
        }
        (dq, dk, dv)
    }
}
