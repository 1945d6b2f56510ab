//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] owns every value produced during one forward pass. Values
//! are addressed by copyable [`Var`] handles. An op record is appended only
//! when at least one input requires a gradient, so a pass that touches no
//! trainable value leaves the tape empty. [`Graph::backward`] walks the
//! records in reverse creation order; gradients of leaf variables accumulate
//! across calls until [`Graph::zero_grad`].

use super::kernels::{self, ConvDims, MatRef};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which operand of a binary op is repeated along leading axes.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Bcast {
    None,
    Lhs,
    Rhs,
}

#[derive(Debug)]
enum Op {
    MatMul,
    Add,
    Sub,
    Mul,
    Affine { scale: f64 },
    Relu,
    Sigmoid,
    Tanh,
    Sum,
    Mean,
    Reshape,
    Concat { widths: Vec<usize> },
    SelectTime { t: usize },
    StackTime,
    Conv1d { dims: ConvDims },
    MaxPool1d { argmax: Vec<usize> },
    GlobalAvgPool { len: usize },
    BatchNorm { xhat: Vec<f64>, inv_std: Vec<f64> },
    NormConst { xhat: Vec<f64>, inv_std: Vec<f64> },
    LayerNorm { xhat: Vec<f64>, inv_std: Vec<f64> },
    SoftmaxXent { probs: Vec<f64>, labels: Vec<usize> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Affine { .. } => "affine",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::Reshape => "reshape",
            Op::Concat { .. } => "concat",
            Op::SelectTime { .. } => "select_time",
            Op::StackTime => "stack_time",
            Op::Conv1d { .. } => "conv1d",
            Op::MaxPool1d { .. } => "maxpool1d",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::BatchNorm { .. } => "batch_norm",
            Op::NormConst { .. } => "batch_norm_infer",
            Op::LayerNorm { .. } => "layer_norm",
            Op::SoftmaxXent { .. } => "softmax_cross_entropy",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    inputs: Vec<usize>,
    output: usize,
}

/// Per-channel batch statistics observed by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug)]
pub struct Graph {
    values: Vec<Tensor>,
    requires_grad: Vec<bool>,
    is_leaf: Vec<bool>,
    grads: Vec<Option<Tensor>>,
    nodes: Vec<Node>,
    bindings: Vec<(ParamId, Var)>,
    grad_enabled: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            requires_grad: Vec::new(),
            is_leaf: Vec::new(),
            grads: Vec::new(),
            nodes: Vec::new(),
            bindings: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A graph in which no value requires a gradient; nothing is recorded.
    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// Number of recorded op records.
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_values(&self) -> usize {
        self.values.len()
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.values.push(value);
        self.requires_grad.push(requires_grad);
        self.is_leaf.push(true);
        self.grads.push(None);
        Var(self.values.len() - 1)
    }

    /// Leaf that receives a gradient (unless the graph is `no_grad`).
    pub fn variable(&mut self, value: Tensor) -> Var {
        let rg = self.grad_enabled;
        self.push_leaf(value, rg)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// Binds a stored parameter as a leaf. Trainable parameters require a
    /// gradient in a grad-enabled graph.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        let rg = self.grad_enabled && p.trainable;
        let v = self.push_leaf(p.value.clone(), rg);
        if rg {
            self.bindings.push((id, v));
        }
        v
    }

    pub fn bindings(&self) -> &[(ParamId, Var)] {
        &self.bindings
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires_grad[v.0]
    }

    /// Accumulated gradient of a leaf variable, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn push(&mut self, op: Op, inputs: &[Var], value: Tensor) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let rg = self.grad_enabled && inputs.iter().any(|v| self.requires_grad[v.0]);
        self.values.push(value);
        self.requires_grad.push(rg);
        self.is_leaf.push(false);
        self.grads.push(None);
        let out = self.values.len() - 1;
        if rg {
            self.nodes.push(Node {
                op,
                inputs: inputs.iter().map(|v| v.0).collect(),
                output: out,
            });
        }
        Ok(Var(out))
    }

    // ---------------------------------------------------------------- ops

    /// (n, k) × (k, m) → (n, m).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; n * m];
        kernels::gemm(
            1.0,
            MatRef::row_major(self.value(a).data(), n, k),
            MatRef::row_major(self.value(b).data(), k, m),
            0.0,
            &mut out,
        );
        self.push(Op::MatMul, &[a, b], Tensor::new([n, m], out)?)
    }

    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<Bcast> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return Ok(Bcast::None);
        }
        let strip = |s: &[usize]| -> Vec<usize> {
            s.iter().copied().skip_while(|&d| d == 1).collect()
        };
        let (na, nb) = (self.value(a).len(), self.value(b).len());
        if na >= nb && sa.ends_with(&strip(sb)) {
            return Ok(Bcast::Rhs);
        }
        if nb > na && sb.ends_with(&strip(sa)) {
            return Ok(Bcast::Lhs);
        }
        Err(mismatch(op, sa, sb))
    }

    fn binary(&mut self, a: Var, b: Var, kind: u8) -> Result<Var> {
        let name = ["add", "sub", "mul"][kind as usize];
        let bc = self.broadcast(name, a, b)?;
        let big = if bc == Bcast::Lhs { b } else { a };
        let shape = self.shape(big).to_vec();
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let n = self.value(big).len();
        let (lx, ly) = (x.len(), y.len());
        let f = |l: f64, r: f64| match kind {
            0 => l + r,
            1 => l - r,
            _ => l * r,
        };
        let out: Vec<f64> = (0..n).map(|i| f(x[i % lx], y[i % ly])).collect();
        let op = match kind {
            0 => Op::Add,
            1 => Op::Sub,
            _ => Op::Mul,
        };
        self.push(op, &[a, b], Tensor::new(shape, out)?)
    }

    /// Elementwise sum; the smaller operand may repeat along leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, 0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, 1)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, 2)
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let out = self.value(x).map(|v| scale * v + shift);
        self.push(Op::Affine { scale }, &[x], out)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(Op::Relu, &[x], out)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        self.push(Op::Sigmoid, &[x], out)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::tanh);
        self.push(Op::Tanh, &[x], out)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Op::Sum, &[x], Tensor::scalar(s))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Op::Mean, &[x], Tensor::scalar(s))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        self.push(Op::Reshape, &[x], out)
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let lead = &self.shape(*first)[..self.shape(*first).len() - 1];
        let rows: usize = lead.iter().product();
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s.is_empty() || &s[..s.len() - 1] != lead {
                return Err(mismatch("concat", self.shape(*first), s));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut off = 0;
        for (&x, &w) in xs.iter().zip(&widths) {
            let src = self.value(x).data();
            for r in 0..rows {
                out[r * total + off..r * total + off + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        self.push(Op::Concat { widths }, xs, Tensor::new(shape, out)?)
    }

    /// (batch, time, feat) → (batch, feat) at time `t`.
    pub fn select_time(&mut self, x: Var, t: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 || t >= s[1] {
            return Err(Error::invalid(format!(
                "select_time: step {t} out of range for shape {s:?}"
            )));
        }
        let (b, len, d) = (s[0], s[1], s[2]);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(b * d);
        for i in 0..b {
            out.extend_from_slice(&src[(i * len + t) * d..(i * len + t + 1) * d]);
        }
        self.push(Op::SelectTime { t }, &[x], Tensor::new([b, d], out)?)
    }

    /// Stacks `(batch, feat)` steps into `(batch, steps, feat)`.
    pub fn stack_time(&mut self, steps: &[Var]) -> Result<Var> {
        let first = *steps
            .first()
            .ok_or_else(|| Error::invalid("stack_time of zero steps"))?;
        let s0 = self.shape(first).to_vec();
        if s0.len() != 2 {
            return Err(Error::invalid(format!("stack_time: step shape {s0:?}")));
        }
        let (b, d, len) = (s0[0], s0[1], steps.len());
        let mut out = vec![0.0; b * len * d];
        for (t, &v) in steps.iter().enumerate() {
            if self.shape(v) != s0.as_slice() {
                return Err(mismatch("stack_time", &s0, self.shape(v)));
            }
            let src = self.value(v).data();
            for i in 0..b {
                out[(i * len + t) * d..(i * len + t + 1) * d].copy_from_slice(&src[i * d..(i + 1) * d]);
            }
        }
        self.push(Op::StackTime, steps, Tensor::new([b, len, d], out)?)
    }

    /// Causal 1-D convolution with bias. `x`: (batch, cin, len),
    /// `w`: (kernel, cin, cout), `bias`: (cout) → (batch, cout, len).
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(bias));
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] {
            return Err(mismatch("conv1d", sx, sw));
        }
        if sb != [sw[2]] {
            return Err(mismatch("conv1d", sw, sb));
        }
        let dims = ConvDims {
            batch: sx[0],
            cin: sx[1],
            cout: sw[2],
            len: sx[2],
            kernel: sw[0],
        };
        let out = kernels::conv1d_causal(
            self.value(x).data(),
            self.value(w).data(),
            self.value(bias).data(),
            dims,
        );
        let t = Tensor::new([dims.batch, dims.cout, dims.len], out)?;
        self.push(Op::Conv1d { dims }, &[x, w, bias], t)
    }

    /// Non-overlapping max pool over the last axis of (batch, ch, len);
    /// a trailing remainder shorter than `size` is dropped.
    pub fn maxpool1d(&mut self, x: Var, size: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 || size == 0 || s[2] < size {
            return Err(Error::invalid(format!(
                "maxpool1d: window {size} does not fit shape {s:?}"
            )));
        }
        let (rows, len) = (s[0] * s[1], s[2]);
        let out_len = len / size;
        let shape = [s[0], s[1], out_len];
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows * out_len);
        let mut argmax = Vec::with_capacity(rows * out_len);
        for r in 0..rows {
            for j in 0..out_len {
                let base = r * len + j * size;
                let mut best = base;
                for i in base + 1..base + size {
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                out.push(src[best]);
                argmax.push(best);
            }
        }
        self.push(Op::MaxPool1d { argmax }, &[x], Tensor::new(shape, out)?)
    }

    /// Mean over the last axis: (batch, ch, len) → (batch, ch).
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 {
            return Err(Error::invalid(format!("global_avg_pool: shape {s:?}")));
        }
        let (b, c, len) = (s[0], s[1], s[2]);
        let out: Vec<f64> = self
            .value(x)
            .data()
            .chunks_exact(len)
            .map(|row| row.iter().sum::<f64>() / len as f64)
            .collect();
        self.push(Op::GlobalAvgPool { len }, &[x], Tensor::new([b, c], out)?)
    }

    fn check_affine_params(&self, op: &'static str, x: Var, gamma: Var, beta: Var) -> Result<usize> {
        let s = self.shape(x);
        let c = *s.last().ok_or_else(|| Error::invalid(format!("{op}: scalar input")))?;
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(mismatch(op, s, self.shape(p)));
            }
        }
        Ok(c)
    }

    /// Training-mode batch normalization. Channels are the last axis;
    /// statistics are taken over every leading position. Returns the
    /// normalized output and the (biased) batch statistics.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let c = self.check_affine_params("batch_norm", x, gamma, beta)?;
        let xs = self.value(x).data();
        let m = xs.len() / c;
        if m < 2 {
            return Err(Error::invalid(
                "batch_norm: training mode needs at least two positions per channel",
            ));
        }
        let mut mean = vec![0.0; c];
        for row in xs.chunks_exact(c) {
            mean.iter_mut().zip(row).for_each(|(a, v)| *a += v);
        }
        mean.iter_mut().for_each(|a| *a /= m as f64);
        let mut var = vec![0.0; c];
        for row in xs.chunks_exact(c) {
            for j in 0..c {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|a| *a /= m as f64);
        if var.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "batch_norm" });
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xs.len()];
        let mut out = vec![0.0; xs.len()];
        for (i, (&v, (h, o))) in xs.iter().zip(xhat.iter_mut().zip(out.iter_mut())).enumerate() {
            let j = i % c;
            *h = (v - mean[j]) * inv_std[j];
            *o = g[j] * *h + b[j];
        }
        let shape = self.shape(x).to_vec();
        let v = self.push(Op::BatchNorm { xhat, inv_std }, &[x, gamma, beta], Tensor::new(shape, out)?)?;
        Ok((v, BatchStats { mean, var }))
    }

    /// Inference-mode batch normalization with fixed statistics.
    pub fn batch_norm_fixed(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let c = self.check_affine_params("batch_norm_infer", x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::invalid("batch_norm_infer: statistics length"));
        }
        if var.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "batch_norm_fixed" });
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let xs = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xs.len()];
        let mut out = vec![0.0; xs.len()];
        for (i, &v) in xs.iter().enumerate() {
            let j = i % c;
            xhat[i] = (v - mean[j]) * inv_std[j];
            out[i] = g[j] * xhat[i] + b[j];
        }
        let shape = self.shape(x).to_vec();
        self.push(Op::NormConst { xhat, inv_std }, &[x, gamma, beta], Tensor::new(shape, out)?)
    }

    /// Per-row normalization over the last axis (population variance).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let c = self.check_affine_params("layer_norm", x, gamma, beta)?;
        if c < 2 {
            return Err(Error::invalid("layer_norm: needs at least two features"));
        }
        let xs = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xs.len() / c;
        let mut xhat = vec![0.0; xs.len()];
        let mut out = vec![0.0; xs.len()];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &xs[r * c..(r + 1) * c];
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            if !var.is_finite() {
                return Err(Error::NonFinite { op: "layer_norm" });
            }
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for j in 0..c {
                let h = (row[j] - mu) * is;
                xhat[r * c + j] = h;
                out[r * c + j] = g[j] * h + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(Op::LayerNorm { xhat, inv_std }, &[x, gamma, beta], Tensor::new(shape, out)?)
    }

    /// Mean softmax cross-entropy over a batch of logits (batch, classes).
    /// Returns the scalar loss and the row-stochastic probability matrix.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<(Var, Tensor)> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::invalid(format!(
                "softmax_cross_entropy: logits {s:?} with {} labels",
                labels.len()
            )));
        }
        let (b, k) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(format!(
                "softmax_cross_entropy: label {bad} outside [0, {k})"
            )));
        }
        let probs = softmax_rows(self.value(logits).data(), k);
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let row = &self.value(logits).data()[i * k..(i + 1) * k];
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
                lse - row[l]
            })
            .sum::<f64>()
            / b as f64;
        let p = Tensor::new([b, k], probs.clone())?;
        let v = self.push(
            Op::SoftmaxXent {
                probs,
                labels: labels.to_vec(),
            },
            &[logits],
            Tensor::scalar(loss),
        )?;
        Ok((v, p))
    }

    // ----------------------------------------------------------- backward

    /// Propagates d(loss)/d(value) to every leaf that requires a gradient,
    /// adding onto whatever those leaves already hold.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.values[loss.0].shape().is_empty() && self.values[loss.0].len() != 1 {
            return Err(Error::NonScalarLoss(self.values[loss.0].shape().to_vec()));
        }
        if !self.requires_grad[loss.0] || self.is_leaf[loss.0] {
            return Err(Error::NoGraph);
        }
        let mut local: Vec<Option<Vec<f64>>> = vec![None; self.values.len()];
        local[loss.0] = Some(vec![1.0]);
        for node in self.nodes.iter().rev() {
            if node.output > loss.0 {
                continue;
            }
            let Some(g) = local[node.output].take() else {
                continue;
            };
            let mut sink = Sink {
                local: &mut local,
                values: &self.values,
                requires: &self.requires_grad,
                inputs: &node.inputs,
            };
            backward_node(node, &self.values, &g, &mut sink);
        }
        for (i, g) in local.into_iter().enumerate() {
            if !(self.is_leaf[i] && self.requires_grad[i]) {
                continue;
            }
            let Some(g) = g else { continue };
            match &mut self.grads[i] {
                Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(Tensor::new(self.values[i].shape(), g)?),
            }
        }
        Ok(())
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_rows(logits: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for (row, o) in logits.chunks_exact(k).zip(out.chunks_exact_mut(k)) {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (p, &v) in o.iter_mut().zip(row) {
            *p = (v - mx).exp();
            z += *p;
        }
        o.iter_mut().for_each(|p| *p /= z);
    }
    out
}

/// Lazily allocated gradient buffers for the inputs of one node.
struct Sink<'a> {
    local: &'a mut [Option<Vec<f64>>],
    values: &'a [Tensor],
    requires: &'a [bool],
    inputs: &'a [usize],
}

impl Sink<'_> {
    fn wants(&self, slot: usize) -> bool {
        self.requires[self.inputs[slot]]
    }

    fn buf(&mut self, slot: usize) -> &mut [f64] {
        let id = self.inputs[slot];
        let n = self.values[id].len();
        self.local[id].get_or_insert_with(|| vec![0.0; n])
    }

    /// Adds `g[i]` into input `slot`, folding repeats of a broadcast operand.
    fn add_folded(&mut self, slot: usize, g: &[f64], f: impl Fn(usize) -> f64) {
        if !self.wants(slot) {
            return;
        }
        let buf = self.buf(slot);
        let n = buf.len();
        for (i, gi) in g.iter().enumerate() {
            buf[i % n] += gi * f(i);
        }
    }
}

fn backward_node(node: &Node, values: &[Tensor], g: &[f64], sink: &mut Sink<'_>) {
    let input = |slot: usize| &values[node.inputs[slot]];
    let out = &values[node.output];
    match &node.op {
        Op::MatMul => {
            let (a, b) = (input(0), input(1));
            let (n, k, m) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            if sink.wants(0) {
                let bt = MatRef::transposed(b.data(), m, k);
                kernels::gemm(1.0, MatRef::row_major(g, n, m), bt, 1.0, sink.buf(0));
            }
            if sink.wants(1) {
                let at = MatRef::transposed(a.data(), k, n);
                kernels::gemm(1.0, at, MatRef::row_major(g, n, m), 1.0, sink.buf(1));
            }
        }
        Op::Add => {
            sink.add_folded(0, g, |_| 1.0);
            sink.add_folded(1, g, |_| 1.0);
        }
        Op::Sub => {
            sink.add_folded(0, g, |_| 1.0);
            sink.add_folded(1, g, |_| -1.0);
        }
        Op::Mul => {
            let (a, b) = (input(0).data(), input(1).data());
            let (la, lb) = (a.len(), b.len());
            sink.add_folded(0, g, |i| b[i % lb]);
            sink.add_folded(1, g, |i| a[i % la]);
        }
        Op::Affine { scale } => sink.add_folded(0, g, |_| *scale),
        Op::Relu => {
            let y = out.data();
            sink.add_folded(0, g, |i| if y[i] > 0.0 { 1.0 } else { 0.0 });
        }
        Op::Sigmoid => {
            let y = out.data();
            sink.add_folded(0, g, |i| y[i] * (1.0 - y[i]));
        }
        Op::Tanh => {
            let y = out.data();
            sink.add_folded(0, g, |i| 1.0 - y[i] * y[i]);
        }
        Op::Sum => {
            if sink.wants(0) {
                sink.buf(0).iter_mut().for_each(|v| *v += g[0]);
            }
        }
        Op::Mean => {
            if sink.wants(0) {
                let buf = sink.buf(0);
                let s = g[0] / buf.len() as f64;
                buf.iter_mut().for_each(|v| *v += s);
            }
        }
        Op::Reshape => sink.add_folded(0, g, |_| 1.0),
        Op::Concat { widths } => {
            let total: usize = widths.iter().sum();
            let rows = g.len() / total;
            let mut off = 0;
            for (slot, &w) in widths.iter().enumerate() {
                if sink.wants(slot) {
                    let buf = sink.buf(slot);
                    for r in 0..rows {
                        for j in 0..w {
                            buf[r * w + j] += g[r * total + off + j];
                        }
                    }
                }
                off += w;
            }
        }
        Op::SelectTime { t } => {
            if sink.wants(0) {
                let s = input(0).shape();
                let (b, len, d) = (s[0], s[1], s[2]);
                let buf = sink.buf(0);
                for i in 0..b {
                    let dst = &mut buf[(i * len + t) * d..(i * len + t + 1) * d];
                    dst.iter_mut().zip(&g[i * d..(i + 1) * d]).for_each(|(a, v)| *a += v);
                }
            }
        }
        Op::StackTime => {
            let s = out.shape();
            let (b, len, d) = (s[0], s[1], s[2]);
            for t in 0..len {
                if !sink.wants(t) {
                    continue;
                }
                let buf = sink.buf(t);
                for i in 0..b {
                    let src = &g[(i * len + t) * d..(i * len + t + 1) * d];
                    buf[i * d..(i + 1) * d].iter_mut().zip(src).for_each(|(a, v)| *a += v);
                }
            }
        }
        Op::Conv1d { dims } => {
            let (x, w) = (input(0).data(), input(1).data());
            let mut dx = sink.wants(0).then(|| vec![0.0; x.len()]);
            let mut dw = sink.wants(1).then(|| vec![0.0; w.len()]);
            let mut db = sink.wants(2).then(|| vec![0.0; dims.cout]);
            kernels::conv1d_causal_backward(
                x,
                w,
                g,
                *dims,
                dx.as_deref_mut(),
                dw.as_deref_mut(),
                db.as_deref_mut(),
            );
            for (slot, grad) in [dx, dw, db].into_iter().enumerate() {
                if let Some(grad) = grad {
                    sink.buf(slot).iter_mut().zip(&grad).for_each(|(a, v)| *a += v);
                }
            }
        }
        Op::MaxPool1d { argmax } => {
            if sink.wants(0) {
                let buf = sink.buf(0);
                for (&i, &v) in argmax.iter().zip(g) {
                    buf[i] += v;
                }
            }
        }
        Op::GlobalAvgPool { len } => {
            if sink.wants(0) {
                let buf = sink.buf(0);
                for (row, &v) in buf.chunks_exact_mut(*len).zip(g) {
                    let s = v / *len as f64;
                    row.iter_mut().for_each(|a| *a += s);
                }
            }
        }
        Op::BatchNorm { xhat, inv_std } => {
            let c = inv_std.len();
            let m = (g.len() / c) as f64;
            let gamma = input(1).data();
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            for (i, (&gi, &h)) in g.iter().zip(xhat).enumerate() {
                dgamma[i % c] += gi * h;
                dbeta[i % c] += gi;
            }
            if sink.wants(0) {
                let buf = sink.buf(0);
                for (i, (&gi, &h)) in g.iter().zip(xhat).enumerate() {
                    let j = i % c;
                    // dxhat = g·γ; Σdxhat = γ·dβ; Σdxhat·xhat = γ·dγ
                    buf[i] += gamma[j] * inv_std[j] / m * (m * gi - dbeta[j] - h * dgamma[j]);
                }
            }
            if sink.wants(1) {
                sink.buf(1).iter_mut().zip(&dgamma).for_each(|(a, v)| *a += v);
            }
            if sink.wants(2) {
                sink.buf(2).iter_mut().zip(&dbeta).for_each(|(a, v)| *a += v);
            }
        }
        Op::NormConst { xhat, inv_std } => {
            let c = inv_std.len();
            let gamma = input(1).data();
            if sink.wants(0) {
                sink.add_folded(0, g, |i| gamma[i % c] * inv_std[i % c]);
            }
            if sink.wants(1) {
                let buf = sink.buf(1);
                for (i, (&gi, &h)) in g.iter().zip(xhat).enumerate() {
                    buf[i % c] += gi * h;
                }
            }
            sink.add_folded(2, g, |_| 1.0);
        }
        Op::LayerNorm { xhat, inv_std } => {
            let c = xhat.len() / inv_std.len();
            let gamma = input(1).data();
            if sink.wants(0) {
                let buf = sink.buf(0);
                for (r, &is) in inv_std.iter().enumerate() {
                    let (gr, hr) = (&g[r * c..(r + 1) * c], &xhat[r * c..(r + 1) * c]);
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for j in 0..c {
                        let d = gr[j] * gamma[j];
                        s1 += d;
                        s2 += d * hr[j];
                    }
                    let n = c as f64;
                    for j in 0..c {
                        let d = gr[j] * gamma[j];
                        buf[r * c + j] += is / n * (n * d - s1 - hr[j] * s2);
                    }
                }
            }
            if sink.wants(1) {
                let buf = sink.buf(1);
                for (i, (&gi, &h)) in g.iter().zip(xhat).enumerate() {
                    buf[i % c] += gi * h;
                }
            }
            sink.add_folded(2, g, |_| 1.0);
        }
        Op::SoftmaxXent { probs, labels } => {
            if sink.wants(0) {
                let b = labels.len();
                let k = probs.len() / b;
                let s = g[0] / b as f64;
                let buf = sink.buf(0);
                for (i, &l) in labels.iter().enumerate() {
                    for j in 0..k {
                        let onehot = if j == l { 1.0 } else { 0.0 };
                        buf[i * k + j] += s * (probs[i * k + j] - onehot);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_shapes_and_values() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros([2, 3]));
        let b = g.constant(Tensor::zeros([3, 4]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.shape(c), &[2, 4]);

        let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = g.constant(t(&[2, 1], &[1.0, 1.0]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_inner_mismatch_names_op() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros([2, 3]));
        let b = g.constant(Tensor::zeros([2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn add_zero_is_identity_and_broadcasts_bias() {
        let mut g = Graph::new();
        let x = g.constant(t(&[5], &[1.0, -2.0, 3.5, 0.0, 9.0]));
        let z = g.constant(Tensor::zeros([5]));
        let y = g.add(x, z).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let m = g.constant(t(&[2, 3], &[0.0; 6]));
        let b = g.constant(t(&[3], &[1.0, 2.0, 3.0]));
        let y = g.add(m, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let b1 = g.constant(t(&[1, 3], &[1.0, 2.0, 3.0]));
        assert!(g.add(m, b1).is_ok());
        let bad = g.constant(Tensor::zeros([2]));
        assert!(matches!(g.add(m, bad), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1], &[f64::MAX]));
        assert!(matches!(g.affine(x, 10.0, 0.0), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn backward_of_square_sum() {
        let mut g = Graph::new();
        let w = g.variable(t(&[1], &[3.0]));
        let sq = g.mul(w, w).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap().data(), &[6.0]);
    }

    #[test]
    fn backward_of_bilinear_form() {
        let mut g = Graph::new();
        let a = g.variable(t(&[2], &[1.0, 2.0]));
        let b = g.constant(t(&[2], &[4.0, 5.0]));
        let ab = g.mul(a, b).unwrap();
        let loss = g.sum(ab).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[4.0, 5.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::new();
        let a = g.variable(t(&[3], &[1.0, -2.0, 0.5]));
        let sq = g.mul(a, a).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss).unwrap();
        let once = g.grad(a).unwrap().clone();
        g.backward(loss).unwrap();
        let twice = g.grad(a).unwrap();
        for (x, y) in once.data().iter().zip(twice.data()) {
            assert_eq!(2.0 * x, *y);
        }
        g.zero_grad();
        assert!(g.grad(a).is_none());
    }

    #[test]
    fn backward_errors() {
        let mut g = Graph::new();
        let a = g.variable(t(&[2], &[1.0, 2.0]));
        let y = g.affine(a, 2.0, 0.0).unwrap();
        assert!(matches!(g.backward(y), Err(Error::NonScalarLoss(_))));
        let c = g.constant(Tensor::scalar(1.0));
        let s = g.affine(c, 1.0, 0.0).unwrap();
        assert!(matches!(g.backward(s), Err(Error::NoGraph)));
    }

    #[test]
    fn no_grad_records_nothing() {
        let mut g = Graph::no_grad();
        let a = g.variable(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = g.matmul(a, a).unwrap();
        let c = g.tanh(b).unwrap();
        let _ = g.sum(c).unwrap();
        assert_eq!(g.num_nodes(), 0);

        let mut g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = g.matmul(a, a).unwrap();
        let _ = g.relu(b).unwrap();
        assert_eq!(g.num_nodes(), 0);
    }

    #[test]
    fn softmax_is_stable() {
        let mut g = Graph::new();
        let z = g.variable(t(&[1, 2], &[1000.0, 0.0]));
        let (loss, p) = g.softmax_cross_entropy(z, &[0]).unwrap();
        assert!(g.value(loss).item().abs() < 1e-12);
        assert!((p.data()[0] - 1.0).abs() < 1e-12);
        let z = g.variable(t(&[1, 2], &[0.0, 0.0]));
        let (loss, _) = g.softmax_cross_entropy(z, &[0]).unwrap();
        assert!((g.value(loss).item() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(g.softmax_cross_entropy(z, &[2]).is_err());
    }
}
