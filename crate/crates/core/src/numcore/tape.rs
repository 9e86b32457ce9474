use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::kernels;
use super::{NumError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf { param: Option<usize> },
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    AddBias { x: Var, bias: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    Square { x: Var },
    Silu { x: Var },
    Softplus { x: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Dropout { x: Var, mask: Vec<f64> },
    ConcatCols { parts: Vec<(Var, usize)> },
    Sum { x: Var },
    SoftmaxCe { logits: Var, targets: Vec<usize>, weights: Vec<f64>, denom: f64, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run record of one forward computation.
///
/// Nodes are appended in evaluation order, so the node vector is already a
/// topological order and backward walks it in reverse. A tape serves exactly
/// one backward pass; call [`Tape::reset`] to reuse the allocation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients keyed by parameter slot, as produced by [`Tape::backward`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    slots: BTreeMap<usize, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, param: usize) -> Option<&[f64]> {
        self.slots.get(&param).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.slots.iter().map(|(&k, v)| (k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.slots.values().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

fn expect_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize), NumError> {
    if t.shape().len() != 2 {
        return Err(NumError::Dimension {
            op,
            left: t.shape().to_vec(),
            right: vec![],
        });
    }
    Ok((t.shape()[0], t.shape()[1]))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf; gradients are tracked iff `t.requires_grad`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad;
        self.push(t, Op::Leaf { param: None }, rg)
    }

    /// Records a constant input; never receives a gradient.
    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = false;
        self.push(t, Op::Leaf { param: None }, false)
    }

    /// Records a trainable parameter bound to gradient slot `slot`.
    pub fn param(&mut self, slot: usize, t: &Tensor) -> Var {
        let mut t = t.clone();
        t.requires_grad = true;
        self.push(t, Op::Leaf { param: Some(slot) }, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (m, k) = expect_matrix("matmul", self.value(a))?;
        let (k2, n) = expect_matrix("matmul", self.value(b))?;
        if k != k2 {
            return Err(NumError::Dimension {
                op: "matmul",
                left: vec![m, k],
                right: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(self.value(a).values(), self.value(b).values(), &mut out, m, k, n);
        let rg = self.grad_of(a) || self.grad_of(b);
        Ok(self.push(
            Tensor::matrix(m, n, out)?,
            Op::MatMul { a, b, m, k, n },
            rg,
        ))
    }

    /// Adds a length-`n` bias to every row of an `m × n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, NumError> {
        let (m, n) = expect_matrix("add_bias", self.value(x))?;
        if self.value(bias).len() != n {
            return Err(NumError::Dimension {
                op: "add_bias",
                left: vec![m, n],
                right: self.value(bias).shape().to_vec(),
            });
        }
        let b = self.value(bias).values();
        let mut out = self.value(x).values().to_vec();
        for row in out.chunks_exact_mut(n) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let rg = self.grad_of(x) || self.grad_of(bias);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::AddBias { x, bias }, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NumError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(NumError::Dimension {
                op,
                left: self.value(a).shape().to_vec(),
                right: self.value(b).shape().to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let va = self.value(a);
        let vals = va
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(va.shape().to_vec(), vals).expect("shape preserved")
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let vx = self.value(x);
        let vals = vx.values().iter().map(|&v| f(v)).collect();
        Tensor::new(vx.shape().to_vec(), vals).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.same_shape("add", a, b)?;
        let t = self.zip_with(a, b, |x, y| x + y);
        let rg = self.grad_of(a) || self.grad_of(b);
        Ok(self.push(t, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.same_shape("sub", a, b)?;
        let t = self.zip_with(a, b, |x, y| x - y);
        let rg = self.grad_of(a) || self.grad_of(b);
        Ok(self.push(t, Op::Sub { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.same_shape("mul", a, b)?;
        let t = self.zip_with(a, b, |x, y| x * y);
        let rg = self.grad_of(a) || self.grad_of(b);
        Ok(self.push(t, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.map(x, |v| v * factor);
        let rg = self.grad_of(x);
        self.push(t, Op::Scale { x, factor }, rg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let t = self.map(x, |v| v * v);
        let rg = self.grad_of(x);
        self.push(t, Op::Square { x }, rg)
    }

    /// Elementwise `x · sigmoid(x)`.
    pub fn silu(&mut self, x: Var) -> Var {
        let t = self.map(x, |v| v * kernels::sigmoid(v));
        let rg = self.grad_of(x);
        self.push(t, Op::Silu { x }, rg)
    }

    /// Elementwise `log(1 + e^x)`.
    pub fn softplus(&mut self, x: Var) -> Var {
        let t = self.map(x, kernels::softplus);
        let rg = self.grad_of(x);
        self.push(t, Op::Softplus { x }, rg)
    }

    /// Per-row standardization followed by an affine map.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, NumError> {
        let (m, d) = expect_matrix("layernorm", self.value(x))?;
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(NumError::Dimension {
                op: "layernorm",
                left: vec![m, d],
                right: self.value(gain).shape().to_vec(),
            });
        }
        if !(eps > 0.0) {
            return Err(NumError::Parameter("layernorm eps must be positive"));
        }
        let xv = self.value(x).values();
        let g = self.value(gain).values();
        let b = self.value(bias).values();
        let mut xhat = vec![0.0; m * d];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * d];
        for i in 0..m {
            let row = &xv[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / libm::sqrt(var + eps);
            inv_std[i] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[i * d + j] = h;
                out[i * d + j] = g[j] * h + b[j];
            }
        }
        let rg = self.grad_of(x) || self.grad_of(gain) || self.grad_of(bias);
        Ok(self.push(
            Tensor::matrix(m, d, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-rate)` in training
    /// mode, and inference mode passes `x` through untouched.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var, NumError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NumError::Parameter("dropout rate must lie in [0, 1)"));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let vals = self
            .value(x)
            .values()
            .iter()
            .zip(&mask)
            .map(|(&v, &k)| v * k)
            .collect();
        let t = Tensor::new(self.value(x).shape().to_vec(), vals)?;
        let rg = self.grad_of(x);
        Ok(self.push(t, Op::Dropout { x, mask }, rg))
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let first = parts
            .first()
            .ok_or(NumError::Parameter("concat_cols needs at least one input"))?;
        let m = expect_matrix("concat_cols", self.value(*first))?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = expect_matrix("concat_cols", self.value(p))?;
            if pm != m {
                return Err(NumError::Dimension {
                    op: "concat_cols",
                    left: vec![m],
                    right: vec![pm, pn],
                });
            }
            widths.push((p, pn));
        }
        let n: usize = widths.iter().map(|w| w.1).sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for &(p, w) in &widths {
                out.extend_from_slice(&self.value(p).values()[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.grad_of(p));
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::ConcatCols { parts: widths }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).values().iter().sum();
        let rg = self.grad_of(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Mean over rows of `−log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, NumError> {
        let rows = targets.len();
        self.weighted_softmax_cross_entropy(logits, targets, &vec![1.0; rows], rows as f64)
    }

    /// `Σ_i weight_i · (−log softmax(logits_i)[target_i]) / denom`.
    ///
    /// Rows with zero weight contribute neither value nor gradient.
    pub fn weighted_softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: &[f64],
        denom: f64,
    ) -> Result<Var, NumError> {
        let (m, c) = expect_matrix("softmax_cross_entropy", self.value(logits))?;
        if targets.len() != m || weights.len() != m {
            return Err(NumError::Dimension {
                op: "softmax_cross_entropy",
                left: vec![m, c],
                right: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(NumError::Index {
                index: bad,
                bound: c,
            });
        }
        if !(denom > 0.0) {
            return Err(NumError::Parameter("cross-entropy denominator must be positive"));
        }
        let lv = self.value(logits).values();
        let mut probs = vec![0.0; m * c];
        let mut total = 0.0;
        for i in 0..m {
            let row = &lv[i * c..(i + 1) * c];
            kernels::softmax_into(row, &mut probs[i * c..(i + 1) * c]);
            if weights[i] != 0.0 {
                total += weights[i] * (kernels::log_sum_exp(row) - row[targets[i]]);
            }
        }
        let rg = self.grad_of(logits);
        Ok(self.push(
            Tensor::scalar(total / denom),
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                denom,
                probs,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`, returning `∂loss/∂p` for every
    /// parameter recorded with [`Tape::param`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, NumError> {
        if self.consumed {
            return Err(NumError::BackwardTwice);
        }
        if !self.value(loss).is_scalar() {
            return Err(NumError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let nodes = &self.nodes;
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
                f(slot);
            };
            match &node.op {
                Op::Leaf { param } => {
                    if let Some(p) = param {
                        match out.slots.get_mut(p) {
                            Some(existing) => {
                                for (e, v) in existing.iter_mut().zip(&g) {
                                    *e += v;
                                }
                            }
                            None => {
                                out.slots.insert(*p, g);
                            }
                        }
                    }
                }
                &Op::MatMul { a, b, m, k, n } => {
                    let av = nodes[a.0].value.values();
                    let bv = nodes[b.0].value.values();
                    acc(a, &mut |da| kernels::matmul_grad_left(&g, bv, da, m, k, n));
                    acc(b, &mut |db| kernels::matmul_grad_right(av, &g, db, m, k, n));
                }
                &Op::AddBias { x, bias } => {
                    let n = nodes[bias.0].value.len();
                    acc(x, &mut |dx| add_into(dx, &g));
                    acc(bias, &mut |db| {
                        for row in g.chunks_exact(n) {
                            add_into(db, row);
                        }
                    });
                }
                &Op::Add { a, b } => {
                    acc(a, &mut |d| add_into(d, &g));
                    acc(b, &mut |d| add_into(d, &g));
                }
                &Op::Sub { a, b } => {
                    acc(a, &mut |d| add_into(d, &g));
                    acc(b, &mut |d| {
                        for (dv, gv) in d.iter_mut().zip(&g) {
                            *dv -= gv;
                        }
                    });
                }
                &Op::Mul { a, b } => {
                    let av = nodes[a.0].value.values();
                    let bv = nodes[b.0].value.values();
                    acc(a, &mut |d| {
                        for ((dv, gv), y) in d.iter_mut().zip(&g).zip(bv) {
                            *dv += gv * y;
                        }
                    });
                    acc(b, &mut |d| {
                        for ((dv, gv), x) in d.iter_mut().zip(&g).zip(av) {
                            *dv += gv * x;
                        }
                    });
                }
                &Op::Scale { x, factor } => {
                    acc(x, &mut |d| {
                        for (dv, gv) in d.iter_mut().zip(&g) {
                            *dv += gv * factor;
                        }
                    });
                }
                &Op::Square { x } => {
                    let xv = nodes[x.0].value.values();
                    acc(x, &mut |d| {
                        for ((dv, gv), v) in d.iter_mut().zip(&g).zip(xv) {
                            *dv += 2.0 * v * gv;
                        }
                    });
                }
                &Op::Silu { x } => {
                    let xv = nodes[x.0].value.values();
                    acc(x, &mut |d| {
                        for ((dv, gv), &v) in d.iter_mut().zip(&g).zip(xv) {
                            let s = kernels::sigmoid(v);
                            *dv += gv * s * (1.0 + v * (1.0 - s));
                        }
                    });
                }
                &Op::Softplus { x } => {
                    let xv = nodes[x.0].value.values();
                    acc(x, &mut |d| {
                        for ((dv, gv), &v) in d.iter_mut().zip(&g).zip(xv) {
                            *dv += gv * kernels::sigmoid(v);
                        }
                    });
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let d = nodes[gain.0].value.len();
                    let gv = nodes[gain.0].value.values();
                    acc(*gain, &mut |dg| {
                        for (grow, hrow) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                            for ((o, &gg), &h) in dg.iter_mut().zip(grow).zip(hrow) {
                                *o += gg * h;
                            }
                        }
                    });
                    acc(*bias, &mut |db| {
                        for grow in g.chunks_exact(d) {
                            add_into(db, grow);
                        }
                    });
                    acc(*x, &mut |dx| {
                        let inv_d = 1.0 / d as f64;
                        let mut dxhat = vec![0.0; d];
                        for (i, &inv) in inv_std.iter().enumerate() {
                            let grow = &g[i * d..(i + 1) * d];
                            let hrow = &xhat[i * d..(i + 1) * d];
                            let mut sum_dh = 0.0;
                            let mut sum_dh_h = 0.0;
                            for j in 0..d {
                                dxhat[j] = grow[j] * gv[j];
                                sum_dh += dxhat[j];
                                sum_dh_h += dxhat[j] * hrow[j];
                            }
                            let out = &mut dx[i * d..(i + 1) * d];
                            for j in 0..d {
                                out[j] += inv * (dxhat[j] - inv_d * sum_dh - hrow[j] * inv_d * sum_dh_h);
                            }
                        }
                    });
                }
                Op::Dropout { x, mask } => {
                    acc(*x, &mut |d| {
                        for ((dv, gv), k) in d.iter_mut().zip(&g).zip(mask) {
                            *dv += gv * k;
                        }
                    });
                }
                Op::ConcatCols { parts } => {
                    let n: usize = parts.iter().map(|p| p.1).sum();
                    let mut offset = 0;
                    for &(p, w) in parts {
                        acc(p, &mut |d| {
                            for (drow, grow) in d.chunks_exact_mut(w).zip(g.chunks_exact(n)) {
                                add_into(drow, &grow[offset..offset + w]);
                            }
                        });
                        offset += w;
                    }
                }
                &Op::Sum { x } => {
                    let gv = g[0];
                    acc(x, &mut |d| {
                        for dv in d.iter_mut() {
                            *dv += gv;
                        }
                    });
                }
                Op::SoftmaxCe {
                    logits,
                    targets,
                    weights,
                    denom,
                    probs,
                } => {
                    let c = nodes[logits.0].value.cols();
                    let upstream = g[0] / denom;
                    acc(*logits, &mut |d| {
                        for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                            if w == 0.0 {
                                continue;
                            }
                            let scale = upstream * w;
                            for j in 0..c {
                                let onehot = if j == t { 1.0 } else { 0.0 };
                                d[i * c + j] += scale * (probs[i * c + j] - onehot);
                            }
                        }
                    });
                }
            }
        }
        Ok(out)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
