//! A linear tape of tensor operations with hand-written adjoint rules.
//!
//! Nodes are appended in evaluation order; [`Tape::backward`] walks them in
//! reverse and accumulates each input's gradient from its consumers in that
//! fixed order, so gradients are bitwise reproducible.

use crate::error::{Error, Result};
use crate::tensor::{kernels, log_softmax_row, softmax_row, Tensor, PROB_FLOOR};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch layout for [`Tape::attention`]: queries and keys are stored as
/// `[batch * len, dim]` matrices, one contiguous block per sequence.
#[derive(Clone, Debug)]
pub struct AttentionLayout {
    pub batch: usize,
    pub query_len: usize,
    pub key_len: usize,
    /// `[batch * key_len]`, false for padding keys.
    pub key_mask: Vec<bool>,
    /// Query `i` may only attend to keys `j <= i`.
    pub causal: bool,
}

impl AttentionLayout {
    fn allowed(&self, b: usize, i: usize, j: usize) -> bool {
        self.key_mask[b * self.key_len + j] && (!self.causal || j <= i)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    /// Elementwise product with a constant mask (dropout).
    Scale(Var, Vec<f64>),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        layout: AttentionLayout,
        scale: f64,
        /// `[batch, query_len, key_len]`, zero where disallowed.
        weights: Vec<f64>,
    },
    SoftCrossEntropy {
        logits: Var,
        targets: Tensor,
        weights: Vec<f64>,
        temperature: f64,
        probs: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node on the tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`; `None` when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::Dimension {
            op,
            left: t.shape().to_vec(),
            right: vec![],
        }),
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = crate::tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::Dimension {
                op: "add",
                left: x.shape().to_vec(),
                right: y.shape().to_vec(),
            });
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), data);
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Adds a bias vector `b[n]` to every row of `x[m×n]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let (_, n) = dims2(xv, "add_bias")?;
        if bv.len() != n {
            return Err(Error::Dimension {
                op: "add_bias",
                left: xv.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let mut out = xv.clone();
        for r in 0..out.num_rows() {
            for (o, bias) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += bias;
            }
        }
        Ok(self.push(out, Op::AddBias(x, b)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, Op::Relu(x))
    }

    /// Elementwise product with a constant (used for dropout masks).
    pub fn scale(&mut self, x: Var, factors: Vec<f64>) -> Result<Var> {
        let xv = self.value(x);
        if factors.len() != xv.len() {
            return Err(Error::Dimension {
                op: "scale",
                left: xv.shape().to_vec(),
                right: vec![factors.len()],
            });
        }
        let data = xv.data().iter().zip(&factors).map(|(a, f)| a * f).collect();
        let value = Tensor::from_parts(xv.shape().to_vec(), data);
        Ok(self.push(value, Op::Scale(x, factors)))
    }

    /// Row lookup: output row `i` is `table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: Vec<usize>) -> Result<Var> {
        let tv = self.value(table);
        let (rows, d) = dims2(tv, "gather")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::Validation(format!(
                "gather index {bad} out of range for table with {rows} rows"
            )));
        }
        if ids.is_empty() {
            return Err(Error::Validation("gather with no indices".into()));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in &ids {
            data.extend_from_slice(tv.row(i));
        }
        let value = Tensor::from_parts(vec![ids.len(), d], data);
        Ok(self.push(value, Op::Gather { table, ids }))
    }

    /// Single-head scaled dot-product attention over padded sequences.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, layout: AttentionLayout) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (qr, d) = dims2(qv, "attention")?;
        let (kr, dk) = dims2(kv, "attention")?;
        let (vr, dv) = dims2(vv, "attention")?;
        let AttentionLayout {
            batch,
            query_len,
            key_len,
            ..
        } = layout;
        if qr != batch * query_len || kr != batch * key_len || vr != kr || dk != d {
            return Err(Error::Dimension {
                op: "attention",
                left: qv.shape().to_vec(),
                right: kv.shape().to_vec(),
            });
        }
        if layout.key_mask.len() != batch * key_len {
            return Err(Error::Validation("attention key mask has wrong length".into()));
        }
        let scale = 1.0 / (d as f64).sqrt();
        let mut weights = vec![0.0; batch * query_len * key_len];
        let mut out = vec![0.0; qr * dv];
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        for b in 0..batch {
            for i in 0..query_len {
                let qrow = &qd[(b * query_len + i) * d..(b * query_len + i + 1) * d];
                let w = &mut weights[(b * query_len + i) * key_len..(b * query_len + i + 1) * key_len];
                let mut max = f64::NEG_INFINITY;
                for j in 0..key_len {
                    if layout.allowed(b, i, j) {
                        let krow = &kd[(b * key_len + j) * d..(b * key_len + j + 1) * d];
                        w[j] = kernels::dot(qrow, krow) * scale;
                        max = max.max(w[j]);
                    }
                }
                if max == f64::NEG_INFINITY {
                    continue;
                }
                let mut sum = 0.0;
                for j in 0..key_len {
                    if layout.allowed(b, i, j) {
                        w[j] = (w[j] - max).exp();
                        sum += w[j];
                    }
                }
                let orow = &mut out[(b * query_len + i) * dv..(b * query_len + i + 1) * dv];
                for j in 0..key_len {
                    if layout.allowed(b, i, j) {
                        w[j] /= sum;
                        let vrow = &vd[(b * key_len + j) * dv..(b * key_len + j + 1) * dv];
                        for (o, &x) in orow.iter_mut().zip(vrow) {
                            *o += w[j] * x;
                        }
                    }
                }
            }
        }
        let value = Tensor::from_parts(vec![qr, dv], out);
        Ok(self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                layout,
                scale,
                weights,
            },
        ))
    }

    /// Weighted sum over rows of `-Σ_v target[v] · log softmax(z / τ)[v]`.
    ///
    /// Rows with zero weight are skipped entirely, so their targets may be
    /// arbitrary. Each target row must be a distribution. Log-probabilities
    /// are floored at `ln(PROB_FLOOR)` in the value.
    pub fn soft_cross_entropy(
        &mut self,
        logits: Var,
        targets: Tensor,
        weights: Vec<f64>,
        temperature: f64,
    ) -> Result<Var> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::Parameter(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let z = self.value(logits);
        if targets.shape() != z.shape() {
            return Err(Error::Dimension {
                op: "soft_cross_entropy",
                left: z.shape().to_vec(),
                right: targets.shape().to_vec(),
            });
        }
        if weights.len() != z.num_rows() {
            return Err(Error::Dimension {
                op: "soft_cross_entropy weights",
                left: vec![z.num_rows()],
                right: vec![weights.len()],
            });
        }
        let floor = PROB_FLOOR.ln();
        let v = z.last_dim();
        let mut probs = Tensor::zeros(z.shape());
        let mut logp = vec![0.0; v];
        let mut total = 0.0;
        for r in 0..z.num_rows() {
            if weights[r] == 0.0 {
                continue;
            }
            log_softmax_row(z.row(r), temperature, &mut logp);
            softmax_row(z.row(r), temperature, probs.row_mut(r));
            let mut row_loss = 0.0;
            for (&q, &lp) in targets.row(r).iter().zip(&logp) {
                if q != 0.0 {
                    row_loss -= q * lp.max(floor);
                }
            }
            total += weights[r] * row_loss;
        }
        if !total.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss value {total}")));
        }
        Ok(self.push(
            Tensor::scalar(total),
            Op::SoftCrossEntropy {
                logits,
                targets,
                weights,
                temperature,
                probs,
            },
        ))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Validation(format!(
                "backward requires a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k) = dims2(av, "matmul")?;
                    let n = bv.shape()[1];
                    let da = kernels::matmul_nt(g.data(), bv.data(), m, n, k);
                    let db = kernels::matmul_tn(av.data(), g.data(), m, k, n);
                    accumulate(&mut grads, *a, Tensor::from_parts(vec![m, k], da))?;
                    accumulate(&mut grads, *b, Tensor::from_parts(vec![k, n], db))?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g.clone())?;
                }
                Op::AddBias(x, b) => {
                    let n = g.last_dim();
                    let mut db = vec![0.0; n];
                    for r in 0..g.num_rows() {
                        for (acc, &x) in db.iter_mut().zip(g.row(r)) {
                            *acc += x;
                        }
                    }
                    let bshape = self.value(*b).shape().to_vec();
                    accumulate(&mut grads, *x, g.clone())?;
                    accumulate(&mut grads, *b, Tensor::from_parts(bshape, db))?;
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let data = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(&gi, &xi)| if xi > 0.0 { gi } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, Tensor::from_parts(g.shape().to_vec(), data))?;
                }
                Op::Scale(x, factors) => {
                    let data = g.data().iter().zip(factors).map(|(a, f)| a * f).collect();
                    accumulate(&mut grads, *x, Tensor::from_parts(g.shape().to_vec(), data))?;
                }
                Op::Gather { table, ids } => {
                    let mut dt = Tensor::zeros(self.value(*table).shape());
                    for (r, &id) in ids.iter().enumerate() {
                        for (acc, &x) in dt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *acc += x;
                        }
                    }
                    accumulate(&mut grads, *table, dt)?;
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    layout,
                    scale,
                    weights,
                } => {
                    let (dq, dk, dv) = self.attention_backward(&g, *q, *k, *v, layout, *scale, weights);
                    accumulate(&mut grads, *q, dq)?;
                    accumulate(&mut grads, *k, dk)?;
                    accumulate(&mut grads, *v, dv)?;
                }
                Op::SoftCrossEntropy {
                    logits,
                    targets,
                    weights,
                    temperature,
                    probs,
                } => {
                    let upstream = g.data()[0];
                    let mut dz = Tensor::zeros(probs.shape());
                    for r in 0..probs.num_rows() {
                        if weights[r] == 0.0 {
                            continue;
                        }
                        let c = upstream * weights[r] / temperature;
                        for ((d, &p), &t) in dz.row_mut(r).iter_mut().zip(probs.row(r)).zip(targets.row(r)) {
                            *d = c * (p - t);
                        }
                    }
                    accumulate(&mut grads, *logits, dz)?;
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &Tensor,
        q: Var,
        k: Var,
        v: Var,
        layout: &AttentionLayout,
        scale: f64,
        weights: &[f64],
    ) -> (Tensor, Tensor, Tensor) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (batch, tq, tk) = (layout.batch, layout.query_len, layout.key_len);
        let mut dq = Tensor::zeros(qv.shape());
        let mut dk = Tensor::zeros(kv.shape());
        let mut dvt = Tensor::zeros(vv.shape());
        let mut dw = vec![0.0; tk];
        for b in 0..batch {
            for i in 0..tq {
                let qi = b * tq + i;
                let grow = g.row(qi);
                let w = &weights[qi * tk..(qi + 1) * tk];
                // dL/dw_j and the softmax correction term Σ_l w_l dL/dw_l
                let mut inner = 0.0;
                for j in 0..tk {
                    dw[j] = 0.0;
                    if !layout.allowed(b, i, j) {
                        continue;
                    }
                    let kj = b * tk + j;
                    dw[j] = kernels::dot(grow, vv.row(kj));
                    inner += w[j] * dw[j];
                    for (acc, &x) in dvt.row_mut(kj).iter_mut().zip(grow) {
                        *acc += w[j] * x;
                    }
                }
                for j in 0..tk {
                    if !layout.allowed(b, i, j) {
                        continue;
                    }
                    let kj = b * tk + j;
                    let ds = w[j] * (dw[j] - inner) * scale;
                    for (acc, &x) in dq.row_mut(qi).iter_mut().zip(kv.row(kj)) {
                        *acc += ds * x;
                    }
                    for (acc, &x) in dk.row_mut(kj).iter_mut().zip(qv.row(qi)) {
                        *acc += ds * x;
                    }
                }
            }
        }
        (dq, dk, dvt)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: Tensor) -> Result<()> {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}
