//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is a
//! valid topological order for the backward pass. A graph is built per batch
//! and dropped afterwards.

use crate::error::{data_err, shape_err, Error, Result};

use super::kernels;
use super::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Deliberate defects for negative-control tests of the gradient checker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Softmax backward drops the `Σ dy·y` term.
    SoftmaxBackward,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    BroadcastAdd(Var, Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Embedding {
        table: Var,
        indices: Vec<usize>,
    },
    Concat(Vec<Var>),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    CausalAttention {
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        seq: usize,
        heads: usize,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    fault: Option<Fault>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracks(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf whose gradient is accumulated by [`Graph::backward`].
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated at `v`, if it took part in a backward pass.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Attention probabilities of a [`Graph::causal_attention`] node, laid out
    /// `[batch, heads, seq, seq]`.
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::CausalAttention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    // ---- forward ops -------------------------------------------------

    /// `a[.., k] · b[k, n]`; leading axes of `a` are flattened.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.shape().len() != 2 || av.cols() != bv.shape()[0] {
            return Err(shape_err!("matmul {:?} · {:?}", av.shape(), bv.shape()));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let data = kernels::matmul(av.data(), bv.data(), m, k, n);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let rg = self.tracks(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err!(
                "{what} {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.tracks(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.tracks(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let av = self.value(a);
        let t = Tensor::new(av.shape().to_vec(), av.data().iter().map(|x| x * s).collect()).unwrap();
        let rg = self.tracks(&[a]);
        self.push(t, Op::Scale(a, s), rg)
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.tracks(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// `x + b` with `b` (`r × c`) tiled down the rows of `x` (`n × c`, `r | n`).
    /// A bias vector is the case `r = 1`.
    pub fn broadcast_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if xv.cols() != bv.cols() || xv.rows() % bv.rows() != 0 {
            return Err(shape_err!("broadcast_add {:?} + {:?}", xv.shape(), bv.shape()));
        }
        let bl = bv.len();
        let data = xv.data().iter().enumerate().map(|(i, v)| v + bv.data()[i % bl]).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.tracks(&[x, b]);
        Ok(self.push(t, Op::BroadcastAdd(x, b), rg))
    }

    /// GELU, tanh form.
    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv
            .data()
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()))
            .collect();
        let t = Tensor::new(xv.shape().to_vec(), data).unwrap();
        let rg = self.tracks(&[x]);
        self.push(t, Op::Gelu(x), rg)
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(c) {
            softmax_in_place(row);
        }
        let t = Tensor::new(xv.shape().to_vec(), data).unwrap();
        let rg = self.tracks(&[x]);
        self.push(t, Op::Softmax(x), rg)
    }

    /// Layer norm over the last axis with learnable `gain` and `bias` (length `c`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let c = xv.cols();
        if gv.len() != c || bv.len() != c {
            return Err(shape_err!(
                "layer_norm over {c} columns with gain {:?} and bias {:?}",
                gv.shape(),
                bv.shape()
            ));
        }
        let rows = xv.rows();
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = inv;
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat[r * c + j] = h;
                out[r * c + j] = gv.data()[j] * h + bv.data()[j];
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.tracks(&[x, gain, bias]);
        Ok(self.push(t, Op::LayerNorm { x, gain, bias, xhat, inv_std }, rg))
    }

    /// Rows of `table` (`J × d`) selected by `indices`, giving `len × d`.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.shape().len() != 2 {
            return Err(shape_err!("embedding table must be 2-D, got {:?}", tv.shape()));
        }
        let (j, d) = (tv.shape()[0], tv.shape()[1]);
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= j {
                return Err(data_err!("token {i} out of range 0..{j}"));
            }
            data.extend_from_slice(tv.row(i));
        }
        let t = Tensor::new(vec![indices.len(), d], data)?;
        let rg = self.tracks(&[table]);
        Ok(self.push(t, Op::Embedding { table, indices: indices.to_vec() }, rg))
    }

    /// Concatenation along the last axis of tensors with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| shape_err!("concat of nothing"))?;
        let rows = self.value(*first).rows();
        if parts.iter().any(|p| self.value(*p).rows() != rows) {
            return Err(shape_err!("concat inputs disagree on row count"));
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let mut shape = self.value(*first).shape().to_vec();
        *shape.last_mut().unwrap() = total;
        let rg = self.tracks(parts);
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(parts.to_vec()), rg))
    }

    /// Mean over rows of `−log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, c) = (lv.rows(), lv.cols());
        if targets.len() != rows {
            return Err(shape_err!("{} targets for {rows} rows of logits", targets.len()));
        }
        let mut probs = lv.data().to_vec();
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(data_err!("target {t} out of range 0..{c}"));
            }
            let row = &mut probs[r * c..(r + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
            softmax_in_place(row);
        }
        loss /= rows as f64;
        let rg = self.tracks(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs },
            rg,
        ))
    }

    /// Multi-head causal self-attention over `batch` sequences of length `seq`.
    ///
    /// `q`, `k`, `v` are `(batch·seq) × E` with heads occupying consecutive
    /// `E / heads` column blocks. Position `t` attends to positions `≤ t` only;
    /// future positions get exactly zero weight.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, batch: usize, seq: usize, heads: usize) -> Result<Var> {
        self.same_shape(q, k, "attention q/k")?;
        self.same_shape(q, v, "attention q/v")?;
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let e = qv.cols();
        if qv.rows() != batch * seq || heads == 0 || e % heads != 0 {
            return Err(shape_err!(
                "attention over {:?} with batch {batch}, seq {seq}, heads {heads}",
                qv.shape()
            ));
        }
        let dh = e / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; batch * heads * seq * seq];
        let mut out = vec![0.0; batch * seq * e];
        for b in 0..batch {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..seq {
                    let qi = &qv.row(b * seq + i)[off..off + dh];
                    let p = &mut probs[((b * heads + h) * seq + i) * seq..][..seq];
                    for j in 0..=i {
                        let kj = &kv.row(b * seq + j)[off..off + dh];
                        p[j] = scale * qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>();
                    }
                    softmax_in_place(&mut p[..=i]);
                    let o = &mut out[(b * seq + i) * e + off..][..dh];
                    for j in 0..=i {
                        let vj = &vv.row(b * seq + j)[off..off + dh];
                        for (ov, &x) in o.iter_mut().zip(vj) {
                            *ov += p[j] * x;
                        }
                    }
                }
            }
        }
        let t = Tensor::new(qv.shape().to_vec(), out)?;
        let rg = self.tracks(&[q, k, v]);
        Ok(self.push(t, Op::CausalAttention { q, k, v, batch, seq, heads, probs }, rg))
    }

    // ---- backward ----------------------------------------------------

    /// Accumulates d(loss)/d(node) for every node that requires a gradient.
    /// `loss` must hold a single value.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(shape_err!("backward needs a scalar loss, got {:?}", self.value(loss).shape()));
        }
        if !self.value(loss).item().is_finite() {
            return Err(Error::Numerical(format!("non-finite loss {}", self.value(loss).item())));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(grad) = self.nodes[idx].grad.take() else { continue };
            self.propagate(idx, &grad);
            self.nodes[idx].grad = Some(grad);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let len = node.value.len();
        let g = node.grad.get_or_insert_with(|| vec![0.0; len]);
        f(g);
    }

    fn propagate(&mut self, idx: usize, grad: &[f64]) {
        // Take the op out so input values can be borrowed while gradients are written.
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).cols();
                if self.nodes[a.0].requires_grad {
                    let bd = self.value(*b).data().to_vec();
                    self.accumulate(*a, |ga| kernels::matmul_grad_lhs(grad, &bd, ga, m, k, n));
                }
                if self.nodes[b.0].requires_grad {
                    let ad = self.value(*a).data().to_vec();
                    self.accumulate(*b, |gb| kernels::matmul_grad_rhs(&ad, grad, gb, m, k, n));
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    self.accumulate(v, |g| g.iter_mut().zip(grad).for_each(|(x, d)| *x += d));
                }
            }
            Op::Mul(a, b) => {
                let ad = self.value(*a).data().to_vec();
                let bd = self.value(*b).data().to_vec();
                self.accumulate(*a, |g| {
                    for i in 0..g.len() {
                        g[i] += grad[i] * bd[i];
                    }
                });
                self.accumulate(*b, |g| {
                    for i in 0..g.len() {
                        g[i] += grad[i] * ad[i];
                    }
                });
            }
            Op::Scale(a, s) => {
                self.accumulate(*a, |g| g.iter_mut().zip(grad).for_each(|(x, d)| *x += s * d));
            }
            Op::Sum(a) => {
                let d = grad[0];
                self.accumulate(*a, |g| g.iter_mut().for_each(|x| *x += d));
            }
            Op::BroadcastAdd(x, b) => {
                self.accumulate(*x, |g| g.iter_mut().zip(grad).for_each(|(v, d)| *v += d));
                self.accumulate(*b, |g| {
                    let bl = g.len();
                    for (i, d) in grad.iter().enumerate() {
                        g[i % bl] += d;
                    }
                });
            }
            Op::Gelu(x) => {
                let xd = self.value(*x).data().to_vec();
                self.accumulate(*x, |g| {
                    for (i, &v) in xd.iter().enumerate() {
                        let u = GELU_C * (v + GELU_A * v * v * v);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        g[i] += grad[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
                    }
                });
            }
            Op::Softmax(x) => {
                let y = self.nodes[idx].value.data().to_vec();
                let c = self.nodes[idx].value.cols();
                let faulty = self.fault == Some(Fault::SoftmaxBackward);
                self.accumulate(*x, |g| {
                    for r in 0..y.len() / c {
                        let (yr, dr) = (&y[r * c..(r + 1) * c], &grad[r * c..(r + 1) * c]);
                        let dot = if faulty { 0.0 } else { yr.iter().zip(dr).map(|(a, b)| a * b).sum::<f64>() };
                        for j in 0..c {
                            g[r * c + j] += yr[j] * (dr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let c = self.value(*x).cols();
                let gd = self.value(*gain).data().to_vec();
                self.accumulate(*gain, |g| {
                    for (i, d) in grad.iter().enumerate() {
                        g[i % c] += d * xhat[i];
                    }
                });
                self.accumulate(*bias, |g| {
                    for (i, d) in grad.iter().enumerate() {
                        g[i % c] += d;
                    }
                });
                self.accumulate(*x, |g| {
                    let mut dxhat = vec![0.0; c];
                    for (r, &inv) in inv_std.iter().enumerate() {
                        let base = r * c;
                        let mut sum = 0.0;
                        let mut sum_h = 0.0;
                        for j in 0..c {
                            dxhat[j] = grad[base + j] * gd[j];
                            sum += dxhat[j];
                            sum_h += dxhat[j] * xhat[base + j];
                        }
                        for j in 0..c {
                            g[base + j] += inv / c as f64 * (c as f64 * dxhat[j] - sum - xhat[base + j] * sum_h);
                        }
                    }
                });
            }
            Op::Embedding { table, indices } => {
                let d = self.value(*table).cols();
                self.accumulate(*table, |g| {
                    for (r, &i) in indices.iter().enumerate() {
                        for j in 0..d {
                            g[i * d + j] += grad[r * d + j];
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let total = self.nodes[idx].value.cols();
                let mut off = 0;
                for p in parts {
                    let c = self.value(*p).cols();
                    self.accumulate(*p, |g| {
                        for r in 0..g.len() / c {
                            for j in 0..c {
                                g[r * c + j] += grad[r * total + off + j];
                            }
                        }
                    });
                    off += c;
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let c = self.value(*logits).cols();
                let scale = grad[0] / targets.len() as f64;
                self.accumulate(*logits, |g| {
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let p = probs[r * c + j];
                            g[r * c + j] += scale * (p - if j == t { 1.0 } else { 0.0 });
                        }
                    }
                });
            }
            Op::CausalAttention { q, k, v, batch, seq, heads, probs } => {
                let (batch, seq, heads) = (*batch, *seq, *heads);
                let e = self.value(*q).cols();
                let dh = e / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let qd = self.value(*q).data().to_vec();
                let kd = self.value(*k).data().to_vec();
                let vd = self.value(*v).data().to_vec();
                let mut gq = vec![0.0; qd.len()];
                let mut gk = vec![0.0; kd.len()];
                let mut gv = vec![0.0; vd.len()];
                let mut dp = vec![0.0; seq];
                for b in 0..batch {
                    for h in 0..heads {
                        let off = h * dh;
                        for i in 0..seq {
                            let p = &probs[((b * heads + h) * seq + i) * seq..][..seq];
                            let go = &grad[(b * seq + i) * e + off..][..dh];
                            // dP_ij = go · v_j ; dV_j += P_ij go
                            for j in 0..=i {
                                let vrow = (b * seq + j) * e + off;
                                dp[j] = go.iter().zip(&vd[vrow..vrow + dh]).map(|(x, y)| x * y).sum();
                                for t in 0..dh {
                                    gv[vrow + t] += p[j] * go[t];
                                }
                            }
                            let dot: f64 = (0..=i).map(|j| p[j] * dp[j]).sum();
                            let qrow = (b * seq + i) * e + off;
                            for j in 0..=i {
                                let ds = p[j] * (dp[j] - dot) * scale;
                                let krow = (b * seq + j) * e + off;
                                for t in 0..dh {
                                    gq[qrow + t] += ds * kd[krow + t];
                                    gk[krow + t] += ds * qd[qrow + t];
                                }
                            }
                        }
                    }
                }
                for (var, g) in [(*q, gq), (*k, gk), (*v, gv)] {
                    self.accumulate(var, |acc| acc.iter_mut().zip(&g).for_each(|(a, d)| *a += d));
                }
            }
        }
        self.nodes[idx].op = op;
    }
}

/// Max-subtracted softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
