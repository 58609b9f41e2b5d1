use super::kernels::{self, lanes};
use super::Tensor;
use crate::error::{contract_err, shape_err, Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Max,
    Mean,
}

/// Operation families, used to target fault injection in gradient checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Linear,
    Add,
    Sub,
    Mul,
    Scale,
    Relu,
    Softmax,
    Gather,
    WeightedGather,
    RepeatRows,
    RepeatChannels,
    Reduce,
    SumAll,
    Concat,
    Slice,
    Reshape,
    BatchNorm,
    CrossEntropy,
}

impl OpKind {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "linear" => Self::Linear,
            "add" => Self::Add,
            "sub" => Self::Sub,
            "mul" => Self::Mul,
            "scale" => Self::Scale,
            "relu" => Self::Relu,
            "softmax" => Self::Softmax,
            "gather" => Self::Gather,
            "weighted-gather" => Self::WeightedGather,
            "repeat-rows" => Self::RepeatRows,
            "repeat-channels" => Self::RepeatChannels,
            "reduce" => Self::Reduce,
            "sum-all" => Self::SumAll,
            "concat" => Self::Concat,
            "slice" => Self::Slice,
            "reshape" => Self::Reshape,
            "batch-norm" => Self::BatchNorm,
            "cross-entropy" => Self::CrossEntropy,
            _ => return None,
        })
    }
}

enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax { x: Var, axis: usize },
    Gather { src: Var, index: Vec<usize> },
    WeightedGather { src: Var, index: Vec<usize>, weights: Vec<f64>, fan: usize },
    RepeatRows { x: Var, times: usize },
    RepeatChannels { x: Var, times: usize },
    Reduce { x: Var, axis: usize, kind: ReduceKind, argmax: Vec<usize> },
    SumAll(Var),
    Concat { parts: Vec<Var> },
    Slice { x: Var, start: usize },
    Reshape(Var),
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, batch: bool },
    CrossEntropy { logits: Var, targets: Vec<f64>, probs: Vec<f64> },
}

impl Op {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Leaf => return None,
            Op::Linear { .. } => OpKind::Linear,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Relu(_) => OpKind::Relu,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::Gather { .. } => OpKind::Gather,
            Op::WeightedGather { .. } => OpKind::WeightedGather,
            Op::RepeatRows { .. } => OpKind::RepeatRows,
            Op::RepeatChannels { .. } => OpKind::RepeatChannels,
            Op::Reduce { .. } => OpKind::Reduce,
            Op::SumAll(_) => OpKind::SumAll,
            Op::Concat { .. } => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Reshape(_) => OpKind::Reshape,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        })
    }
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Per-channel statistics observed by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, so inputs always precede the nodes
/// that consume them and a reverse sweep is a valid backward schedule.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<(OpKind, f64)>,
}

/// Gradients produced by [`Tape::backward`], retained for leaf nodes only.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `var`, or zeros of `len` if it received none.
    pub fn get_or_zeros(&self, var: Var, len: usize) -> Vec<f64> {
        self.get(var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len])
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Scales the gradient every `kind` operation sends to its inputs.
    /// Only used to prove that gradient checks catch broken rules.
    pub fn corrupt_backward(&mut self, kind: OpKind, factor: f64) {
        self.fault = Some((kind, factor));
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf whose gradient will be tracked.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, true, Op::Leaf)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, false, Op::Leaf)
    }

    fn push_unchecked(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node { value, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Result<Var> {
        if !value.all_finite() {
            let name = op.kind().map(|k| format!("{k:?}")).unwrap_or_default();
            return Err(Error::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_unchecked(value, requires_grad, op))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    /// Shared affine map over the last axis: `y[.., j] = Σ_i x[.., i]·w[i, j] + b[j]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if ws.len() != 2 || xs.is_empty() || xs[xs.len() - 1] != ws[0] {
            return shape_err(format!("linear: input {xs:?} against weight {ws:?}"));
        }
        let (din, dout) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return shape_err(format!("linear: bias {:?}, expected [{dout}]", self.shape(b)));
            }
        }
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = dout;
        let rows = self.value(x).rows();
        let mut out = vec![0.0; rows * dout];
        kernels::matmul(self.value(x).data(), self.value(w).data(), &mut out, rows, din, dout);
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_exact_mut(dout) {
                for (o, bj) in row.iter_mut().zip(bias) {
                    *o += bj;
                }
            }
        }
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(Tensor { shape, data: out }, &inputs, Op::Linear { x, w, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        self.push(Tensor { shape, data }, &[a, b], Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x - y);
        let shape = self.shape(a).to_vec();
        self.push(Tensor { shape, data }, &[a, b], Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        self.push(Tensor { shape, data }, &[a, b], Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let v = self.value(a);
        let data = v.data().iter().map(|x| x * factor).collect();
        let shape = v.shape().to_vec();
        self.push(Tensor { shape, data }, &[a], Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let shape = v.shape().to_vec();
        self.push(Tensor { shape, data }, &[a], Op::Relu(a))
    }

    /// Softmax along `axis`, stabilised by subtracting the lane maximum.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return shape_err(format!("softmax axis {axis} on rank {}", shape.len()));
        }
        let (outer, len, inner) = lanes(&shape, axis);
        let mut out = vec![0.0; outer * len * inner];
        kernels::softmax_lanes(self.value(x).data(), &mut out, outer, len, inner);
        self.push(Tensor { shape, data: out }, &[x], Op::Softmax { x, axis })
    }

    /// Row lookup: `out[idx.., :] = src[index[idx..], :]` for a rank-2 `src`.
    /// The output shape is `index_shape ++ [D]`.
    pub fn gather_rows(&mut self, src: Var, index: &[usize], index_shape: &[usize]) -> Result<Var> {
        let ss = self.shape(src);
        if ss.len() != 2 {
            return shape_err(format!("gather_rows: source must be rank 2, got {ss:?}"));
        }
        if index_shape.iter().product::<usize>() != index.len() {
            return shape_err("gather_rows: index shape does not match index length");
        }
        let (n, d) = (ss[0], ss[1]);
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::Index { index: bad, bound: n });
        }
        let s = self.value(src).data();
        let mut out = Vec::with_capacity(index.len() * d);
        for &i in index {
            out.extend_from_slice(&s[i * d..(i + 1) * d]);
        }
        let mut shape = index_shape.to_vec();
        shape.push(d);
        let index = index.to_vec();
        self.push(Tensor { shape, data: out }, &[src], Op::Gather { src, index })
    }

    /// `out[t, :] = Σ_j weights[t, j] · src[index[t, j], :]` with `fan` entries per target.
    pub fn weighted_gather(
        &mut self,
        src: Var,
        index: Vec<usize>,
        weights: Vec<f64>,
        fan: usize,
    ) -> Result<Var> {
        let ss = self.shape(src);
        if ss.len() != 2 || fan == 0 || index.len() != weights.len() || index.len() % fan != 0 {
            return shape_err("weighted_gather: inconsistent index/weight layout");
        }
        let (n, d) = (ss[0], ss[1]);
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::Index { index: bad, bound: n });
        }
        let targets = index.len() / fan;
        let s = self.value(src).data();
        let mut out = vec![0.0; targets * d];
        for t in 0..targets {
            let dst = &mut out[t * d..(t + 1) * d];
            for j in 0..fan {
                let w = weights[t * fan + j];
                let row = &s[index[t * fan + j] * d..(index[t * fan + j] + 1) * d];
                for (o, v) in dst.iter_mut().zip(row) {
                    *o += w * v;
                }
            }
        }
        let value = Tensor { shape: vec![targets, d], data: out };
        self.push(value, &[src], Op::WeightedGather { src, index, weights, fan })
    }

    /// Replicates `[M, D]` into `[M, times, D]`.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 2 {
            return shape_err(format!("repeat_rows expects rank 2, got {xs:?}"));
        }
        let (m, d) = (xs[0], xs[1]);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(m * times * d);
        for r in 0..m {
            for _ in 0..times {
                out.extend_from_slice(&src[r * d..(r + 1) * d]);
            }
        }
        let value = Tensor { shape: vec![m, times, d], data: out };
        self.push(value, &[x], Op::RepeatRows { x, times })
    }

    /// Repeats every last-axis element `times` times in place:
    /// `out[.., c·times + t] = x[.., c]`.
    pub fn repeat_channels(&mut self, x: Var, times: usize) -> Result<Var> {
        if times == 0 {
            return shape_err("repeat_channels: times must be positive");
        }
        let mut shape = self.shape(x).to_vec();
        let last = shape.last_mut().ok_or_else(|| Error::Shape("repeat_channels on scalar".into()))?;
        *last *= times;
        let data = self
            .value(x)
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, times))
            .collect();
        self.push(Tensor { shape, data }, &[x], Op::RepeatChannels { x, times })
    }

    /// Reduction along `axis`, which is removed from the shape.
    pub fn reduce(&mut self, x: Var, axis: usize, kind: ReduceKind) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return shape_err(format!("reduce axis {axis} on rank {}", shape.len()));
        }
        let (outer, len, inner) = lanes(&shape, axis);
        if len == 0 {
            return shape_err("reduce over an empty axis");
        }
        let mut out = vec![0.0; outer * inner];
        let mut argmax = Vec::new();
        let xd = self.value(x).data();
        match kind {
            ReduceKind::Sum => kernels::sum_lanes(xd, &mut out, outer, len, inner),
            ReduceKind::Mean => {
                kernels::sum_lanes(xd, &mut out, outer, len, inner);
                let inv = 1.0 / len as f64;
                out.iter_mut().for_each(|v| *v *= inv);
            }
            ReduceKind::Max => {
                argmax = vec![0; outer * inner];
                kernels::max_lanes(xd, &mut out, &mut argmax, outer, len, inner);
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let value = Tensor { shape: out_shape, data: out };
        self.push(value, &[x], Op::Reduce { x, axis, kind, argmax })
    }

    /// Sum of every element, as a scalar.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), &[x], Op::SumAll(x))
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let lead = &self.shape(first)[..self.shape(first).len().saturating_sub(1)];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || &s[..s.len() - 1] != lead {
                return shape_err(format!("concat: {s:?} does not match leading axes {lead:?}"));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows = self.value(first).rows();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let parts = parts.to_vec();
        self.push(Tensor { shape, data: out }, &parts.clone(), Op::Concat { parts })
    }

    /// Channels `start..start + len` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let d = *xs.last().ok_or_else(|| Error::Shape("slice of scalar".into()))?;
        if start + len > d {
            return shape_err(format!("slice {start}..{} of width {d}", start + len));
        }
        let data = self
            .value(x)
            .data()
            .chunks_exact(d)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = xs;
        *shape.last_mut().unwrap() = len;
        self.push(Tensor { shape, data }, &[x], Op::Slice { x, start })
    }

    /// Same data under a new shape with an equal element count.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        self.push(value, &[x], Op::Reshape(x))
    }

    /// Batch normalisation over every leading position, per channel, using
    /// the statistics of `x` itself. Returns the observed statistics so the
    /// caller can update running estimates.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let c = self.check_bn(x, gamma, beta)?;
        let xv = self.value(x);
        let rows = xv.rows();
        let mut mean = vec![0.0; c];
        for row in xv.data().chunks_exact(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; c];
        for row in xv.data().chunks_exact(c) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= rows as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let out = self.bn_apply(x, gamma, beta, &mean, &inv_std, true)?;
        Ok((out, BatchStats { mean, var, count: rows }))
    }

    /// Batch normalisation with fixed statistics (inference mode).
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let c = self.check_bn(x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return shape_err("batch_norm_eval: running statistics width mismatch");
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.bn_apply(x, gamma, beta, mean, &inv_std, false)
    }

    fn check_bn(&self, x: Var, gamma: Var, beta: Var) -> Result<usize> {
        let c = self.value(x).last_dim();
        if self.shape(x).is_empty() || self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return shape_err(format!(
                "batch norm: input {:?}, gamma {:?}, beta {:?}",
                self.shape(x),
                self.shape(gamma),
                self.shape(beta)
            ));
        }
        Ok(c)
    }

    fn bn_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: &[f64],
        batch: bool,
    ) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.last_dim();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = Vec::with_capacity(xv.len());
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks_exact(c) {
            for j in 0..c {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        let shape = xv.shape().to_vec();
        let op = Op::BatchNorm { x, gamma, beta, xhat, inv_std: inv_std.to_vec(), batch };
        self.push(Tensor { shape, data: out }, &[x, gamma, beta], op)
    }

    /// Mean label-smoothed cross-entropy of `logits: [N, C]` against integer
    /// labels. The target puts `1 - smoothing` on the true class and spreads
    /// `smoothing` uniformly over the other `C - 1` classes.
    pub fn smoothed_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        smoothing: f64,
    ) -> Result<Var> {
        let ls = self.shape(logits);
        if ls.len() != 2 || ls[0] != labels.len() {
            return shape_err(format!("cross entropy: logits {ls:?} for {} labels", labels.len()));
        }
        let (n, c) = (ls[0], ls[1]);
        if c < 2 || n == 0 {
            return contract_err("cross entropy needs at least 2 classes and 1 point");
        }
        if !(0.0..1.0).contains(&smoothing) {
            return contract_err(format!("label smoothing {smoothing} outside [0, 1)"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return contract_err(format!("label {bad} out of range for {c} classes"));
        }
        let off = smoothing / (c - 1) as f64;
        let mut targets = vec![off; n * c];
        for (i, &l) in labels.iter().enumerate() {
            targets[i * c + l] = 1.0 - smoothing;
        }
        let mut logp = vec![0.0; n * c];
        let lv = self.value(logits).data();
        let mut total = 0.0;
        for i in 0..n {
            kernels::log_softmax_row(&lv[i * c..(i + 1) * c], &mut logp[i * c..(i + 1) * c]);
            let mut row = 0.0;
            for j in 0..c {
                if targets[i * c + j] != 0.0 {
                    row -= targets[i * c + j] * logp[i * c + j];
                }
            }
            total += row;
        }
        let probs = logp.iter().map(|v| v.exp()).collect();
        let loss = Tensor::scalar(total / n as f64);
        self.push(loss, &[logits], Op::CrossEntropy { logits, targets, probs })
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return contract_err(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let factor = match (self.fault, node.op.kind()) {
                (Some((kind, f)), Some(k)) if kind == k => f,
                _ => 1.0,
            };
            self.backward_node(node, &g, factor, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, mut contrib: Vec<f64>, factor: f64) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        if factor != 1.0 {
            contrib.iter_mut().for_each(|c| *c *= factor);
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(&contrib) {
                    *e += c;
                }
            }
            slot => *slot = Some(contrib),
        }
    }

    fn backward_node(&self, node: &Node, g: &[f64], f: f64, grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let ws = self.shape(*w);
                let (din, dout) = (ws[0], ws[1]);
                let rows = g.len() / dout;
                if self.requires_grad(*x) {
                    let mut dx = vec![0.0; rows * din];
                    kernels::matmul_a_bt_acc(g, self.value(*w).data(), &mut dx, rows, dout, din);
                    self.accumulate(grads, *x, dx, f);
                }
                if self.requires_grad(*w) {
                    let mut dw = vec![0.0; din * dout];
                    kernels::matmul_at_b_acc(self.value(*x).data(), g, &mut dw, din, rows, dout);
                    self.accumulate(grads, *w, dw, f);
                }
                if let Some(b) = b {
                    if self.requires_grad(*b) {
                        let mut db = vec![0.0; dout];
                        for row in g.chunks_exact(dout) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        self.accumulate(grads, *b, db, f);
                    }
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec(), f);
                self.accumulate(grads, *b, g.to_vec(), f);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec(), f);
                self.accumulate(grads, *b, g.iter().map(|v| -v).collect(), f);
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    let da = zip_map(g, self.value(*b).data(), |x, y| x * y);
                    self.accumulate(grads, *a, da, f);
                }
                if self.requires_grad(*b) {
                    let db = zip_map(g, self.value(*a).data(), |x, y| x * y);
                    self.accumulate(grads, *b, db, f);
                }
            }
            Op::Scale(a, s) => {
                self.accumulate(grads, *a, g.iter().map(|v| v * s).collect(), f);
            }
            Op::Relu(a) => {
                let da = zip_map(g, self.value(*a).data(), |gv, x| if x > 0.0 { gv } else { 0.0 });
                self.accumulate(grads, *a, da, f);
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = lanes(node.value.shape(), *axis);
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + i;
                        let dot: f64 = (0..len).map(|k| g[at(k)] * y[at(k)]).sum();
                        for k in 0..len {
                            dx[at(k)] = y[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
                self.accumulate(grads, *x, dx, f);
            }
            Op::Gather { src, index } => {
                let s = self.value(*src);
                let d = s.last_dim();
                let mut ds = vec![0.0; s.len()];
                for (r, &i) in index.iter().enumerate() {
                    let dst = &mut ds[i * d..(i + 1) * d];
                    for (o, v) in dst.iter_mut().zip(&g[r * d..(r + 1) * d]) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *src, ds, f);
            }
            Op::WeightedGather { src, index, weights, fan } => {
                let s = self.value(*src);
                let d = s.last_dim();
                let mut ds = vec![0.0; s.len()];
                for (e, (&i, &w)) in index.iter().zip(weights).enumerate() {
                    let t = e / fan;
                    let dst = &mut ds[i * d..(i + 1) * d];
                    for (o, v) in dst.iter_mut().zip(&g[t * d..(t + 1) * d]) {
                        *o += w * v;
                    }
                }
                self.accumulate(grads, *src, ds, f);
            }
            Op::RepeatRows { x, times } => {
                let d = self.value(*x).last_dim();
                let m = self.value(*x).rows();
                let mut dx = vec![0.0; m * d];
                kernels::sum_lanes(g, &mut dx, m, *times, d);
                self.accumulate(grads, *x, dx, f);
            }
            Op::Reshape(x) => self.accumulate(grads, *x, g.to_vec(), f),
            Op::RepeatChannels { x, times } => {
                let dx = g.chunks_exact(*times).map(|c| c.iter().sum()).collect();
                self.accumulate(grads, *x, dx, f);
            }
            Op::Reduce { x, axis, kind, argmax } => {
                let xs = self.shape(*x);
                let (outer, len, inner) = lanes(xs, *axis);
                let mut dx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let gv = g[o * inner + i];
                        match kind {
                            ReduceKind::Sum => {
                                for k in 0..len {
                                    dx[(o * len + k) * inner + i] = gv;
                                }
                            }
                            ReduceKind::Mean => {
                                for k in 0..len {
                                    dx[(o * len + k) * inner + i] = gv / len as f64;
                                }
                            }
                            ReduceKind::Max => {
                                dx[(o * len + argmax[o * inner + i]) * inner + i] = gv;
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, dx, f);
            }
            Op::SumAll(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![g[0]; n], f);
            }
            Op::Concat { parts } => {
                let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).last_dim()).collect();
                let total: usize = widths.iter().sum();
                let rows = g.len() / total.max(1);
                let mut offset = 0;
                for (&p, &w) in parts.iter().zip(&widths) {
                    if self.requires_grad(p) {
                        let mut dp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        self.accumulate(grads, p, dp, f);
                    }
                    offset += w;
                }
            }
            Op::Slice { x, start } => {
                let d = self.value(*x).last_dim();
                let len = node.value.last_dim();
                let mut dx = vec![0.0; self.value(*x).len()];
                for (r, chunk) in g.chunks_exact(len).enumerate() {
                    dx[r * d + start..r * d + start + len].copy_from_slice(chunk);
                }
                self.accumulate(grads, *x, dx, f);
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch } => {
                let c = inv_std.len();
                let rows = g.len() / c;
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for r in 0..rows {
                    for j in 0..c {
                        dgamma[j] += g[r * c + j] * xhat[r * c + j];
                        dbeta[j] += g[r * c + j];
                    }
                }
                if self.requires_grad(*x) {
                    let mut dx = vec![0.0; g.len()];
                    if *batch {
                        let n = rows as f64;
                        for r in 0..rows {
                            for j in 0..c {
                                let dxhat = g[r * c + j] * gam[j];
                                let sum_dxhat = dbeta[j] * gam[j];
                                let sum_dxhat_xhat = dgamma[j] * gam[j];
                                dx[r * c + j] = inv_std[j] / n
                                    * (n * dxhat - sum_dxhat - xhat[r * c + j] * sum_dxhat_xhat);
                            }
                        }
                    } else {
                        for r in 0..rows {
                            for j in 0..c {
                                dx[r * c + j] = g[r * c + j] * gam[j] * inv_std[j];
                            }
                        }
                    }
                    self.accumulate(grads, *x, dx, f);
                }
                self.accumulate(grads, *gamma, dgamma, f);
                self.accumulate(grads, *beta, dbeta, f);
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let n = self.shape(*logits)[0] as f64;
                let scale = g[0] / n;
                let dl = zip_map(probs, targets, |p, t| (p - t) * scale);
                self.accumulate(grads, *logits, dl, f);
            }
        }
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}
