//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records every operation together with whatever the backward
//! rule needs (layer-norm statistics, attention probabilities, softmax
//! outputs). [`Graph::backward`] walks the tape in reverse and returns the
//! gradient of a scalar loss with respect to every node that requires one.
//! Parameters enter through [`Graph::param`]; frozen parameters become
//! constants and therefore never receive a gradient.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::kernels;
use crate::params::ModelParams;
use crate::scalar::Scalar;
use crate::tensor::{AttentionMask, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Deliberate corruption of a backward rule. Only used as a negative control
/// for the gradient checker.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BackwardFault {
    /// Multiply the GELU derivative by the given factor.
    ScaleGeluGrad(f64),
}

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var },
    MatMulBt { a: Var, b: Var },
    Linear { x: Var, w: Var, b: Option<Var> },
    Add { a: Var, b: Var },
    Scale { x: Var, factor: T },
    LayerNorm { x: Var, gamma: Var, beta: Var, means: Vec<T>, rstds: Vec<T> },
    Gelu { x: Var },
    Softmax { x: Var },
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<T> },
    Embedding { table: Var, ids: Vec<usize> },
    ConcatRows { parts: Vec<Var> },
    SliceRows { x: Var, start: usize },
    MeanRows { x: Var },
    Sum { x: Var },
    SmoothedCe { logits: Var, targets: Vec<usize>, real: Vec<bool>, eps: T, probs: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<String, Var>,
    fault: Option<BackwardFault>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            fault: None,
        }
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: BackwardFault) {
        self.fault = Some(fault);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push("constant", value, Op::Leaf, false)
    }

    /// A leaf that does receive a gradient (used for inputs in tests and
    /// gradient checks).
    pub fn variable(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push("variable", value, Op::Leaf, true)
    }

    /// Brings a named parameter into the graph. Trainable parameters are
    /// differentiable leaves, frozen ones are constants. Repeated requests for
    /// the same name return the same node.
    pub fn param(&mut self, params: &ModelParams<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let p = params.get(name)?;
        let v = self.push("param", p.tensor.clone(), Op::Leaf, p.trainable)?;
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).matrix_dims("matmul")?;
        let (k2, n) = self.value(b).matrix_dims("matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("{m}×{k} · {k2}×{n}")));
        }
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.any_grad(&[a, b]);
        self.push("matmul", Tensor::new(vec![m, n], out)?, Op::MatMul { a, b }, rg)
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).matrix_dims("matmul_bt")?;
        let (n, k2) = self.value(b).matrix_dims("matmul_bt")?;
        if k != k2 {
            return Err(Error::shape("matmul_bt", format!("{m}×{k} · ({n}×{k2})ᵀ")));
        }
        let out = kernels::matmul_bt(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.any_grad(&[a, b]);
        self.push("matmul_bt", Tensor::new(vec![m, n], out)?, Op::MatMulBt { a, b }, rg)
    }

    /// `x · w + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (m, k) = self.value(x).matrix_dims("linear")?;
        let (k2, n) = self.value(w).matrix_dims("linear")?;
        if k != k2 {
            return Err(Error::shape("linear", format!("input {m}×{k}, weight {k2}×{n}")));
        }
        if let Some(b) = b {
            if self.value(b).numel() != n {
                return Err(Error::shape("linear", format!("bias of {} for {n} outputs", self.value(b).numel())));
            }
        }
        let out = kernels::linear(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            m,
            k,
            n,
        );
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.any_grad(&deps);
        self.push("linear", Tensor::new(vec![m, n], out)?, Op::Linear { x, w, b }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} + {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.any_grad(&[a, b]);
        self.push("add", Tensor::new(shape, data)?, Op::Add { a, b }, rg)
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v * factor).collect();
        let shape = t.shape().to_vec();
        let rg = self.any_grad(&[x]);
        self.push("scale", Tensor::new(shape, data)?, Op::Scale { x, factor }, rg)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let cols = self.value(x).cols();
        if self.value(gamma).numel() != cols || self.value(beta).numel() != cols {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "last dim {cols}, gamma {}, beta {}",
                    self.value(gamma).numel(),
                    self.value(beta).numel()
                ),
            ));
        }
        let (out, means, rstds) = kernels::layer_norm(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        );
        let shape = self.value(x).shape().to_vec();
        let rg = self.any_grad(&[x, gamma, beta]);
        self.push(
            "layer_norm",
            Tensor::new(shape, out)?,
            Op::LayerNorm { x, gamma, beta, means, rstds },
            rg,
        )
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| kernels::gelu(v)).collect();
        let shape = t.shape().to_vec();
        let rg = self.any_grad(&[x]);
        self.push("gelu", Tensor::new(shape, data)?, Op::Gelu { x }, rg)
    }

    /// Row-wise softmax after adding the mask penalty to disallowed entries.
    pub fn masked_softmax(&mut self, x: Var, mask: &AttentionMask) -> Result<Var> {
        let (rows, cols) = self.value(x).matrix_dims("masked_softmax")?;
        if mask.size() != rows || mask.size() != cols {
            return Err(Error::shape(
                "masked_softmax",
                format!("scores {rows}×{cols}, mask {0}×{0}", mask.size()),
            ));
        }
        let mut data = self.value(x).data().to_vec();
        let allowed = |i: usize, j: usize| mask.allowed(i, j);
        kernels::softmax_rows(&mut data, cols, Some(&allowed))?;
        let rg = self.any_grad(&[x]);
        self.push("masked_softmax", Tensor::new(vec![rows, cols], data)?, Op::Softmax { x }, rg)
    }

    /// Scaled dot-product attention over `heads` heads of the projected
    /// queries, keys and values. The mask, when given, must be `n × n`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: Option<&AttentionMask>) -> Result<Var> {
        let (n_q, dim) = self.value(q).matrix_dims("attention")?;
        let (n_k, dk) = self.value(k).matrix_dims("attention")?;
        let (n_v, dv) = self.value(v).matrix_dims("attention")?;
        if heads == 0 || dim % heads != 0 {
            return Err(Error::shape("attention", format!("dim {dim} not divisible into {heads} heads")));
        }
        if dk != dim || dv != dim || n_k != n_v {
            return Err(Error::shape("attention", "query/key/value shapes disagree"));
        }
        if let Some(m) = mask {
            if m.size() != n_q || m.size() != n_k {
                return Err(Error::shape(
                    "attention",
                    format!("mask {0}×{0} for {n_q} queries and {n_k} keys", m.size()),
                ));
            }
        }
        let (out, probs) = kernels::attention(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            n_q,
            n_k,
            dim,
            heads,
            mask,
        )?;
        let rg = self.any_grad(&[q, k, v]);
        self.push(
            "attention",
            Tensor::new(vec![n_q, dim], out)?,
            Op::Attention { q, k, v, heads, probs },
            rg,
        )
    }

    /// Gathers rows of `table`; the gradient scatters back into the table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, cols) = self.value(table).matrix_dims("embedding")?;
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(Error::shape("embedding", format!("id {id} outside table of {rows} rows")));
            }
            data.extend_from_slice(self.value(table).row(id));
        }
        let rg = self.any_grad(&[table]);
        self.push(
            "embedding",
            Tensor::new(vec![ids.len(), cols], data)?,
            Op::Embedding { table, ids: ids.to_vec() },
            rg,
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|&p| self.value(p).cols())
            .ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.value(p).matrix_dims("concat_rows")?;
            if c != cols {
                return Err(Error::shape("concat_rows", format!("width {c} vs {cols}")));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let rg = self.any_grad(parts);
        self.push(
            "concat_rows",
            Tensor::new(vec![rows, cols], data)?,
            Op::ConcatRows { parts: parts.to_vec() },
            rg,
        )
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = self.value(x).matrix_dims("slice_rows")?;
        if start > end || end > rows {
            return Err(Error::shape("slice_rows", format!("{start}..{end} of {rows} rows")));
        }
        let data = self.value(x).data()[start * cols..end * cols].to_vec();
        let rg = self.any_grad(&[x]);
        self.push("slice_rows", Tensor::new(vec![end - start, cols], data)?, Op::SliceRows { x, start }, rg)
    }

    /// Mean over rows, producing a `1 × cols` matrix.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.value(x).matrix_dims("mean_rows")?;
        if rows == 0 {
            return Err(Error::shape("mean_rows", "empty input"));
        }
        let mut data = vec![T::zero(); cols];
        for row in self.value(x).data().chunks_exact(cols) {
            for (d, &v) in data.iter_mut().zip(row) {
                *d += v;
            }
        }
        let n = T::of(rows as f64);
        data.iter_mut().for_each(|d| *d /= n);
        let rg = self.any_grad(&[x]);
        self.push("mean_rows", Tensor::new(vec![1, cols], data)?, Op::MeanRows { x }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.any_grad(&[x]);
        self.push("sum", Tensor::scalar(s), Op::Sum { x }, rg)
    }

    /// Sum over real positions of the cross-entropy between softmax(logits)
    /// and the label-smoothed target distribution (`1 − eps` on the gold id,
    /// `eps / (V − 1)` on every other id).
    pub fn smoothed_ce_sum(&mut self, logits: Var, targets: &[usize], real: &[bool], eps: T) -> Result<Var> {
        let (rows, vocab) = self.value(logits).matrix_dims("smoothed_ce")?;
        if targets.len() != rows || real.len() != rows {
            return Err(Error::shape(
                "smoothed_ce",
                format!("{rows} logit rows, {} targets, {} mask entries", targets.len(), real.len()),
            ));
        }
        if vocab < 2 {
            return Err(Error::shape("smoothed_ce", "vocabulary needs at least two entries"));
        }
        let off = eps / T::of((vocab - 1) as f64);
        let on = T::one() - eps;
        let mut probs = self.value(logits).data().to_vec();
        kernels::softmax_rows(&mut probs, vocab, None)?;
        let mut total = T::zero();
        for (i, row) in self.value(logits).data().chunks_exact(vocab).enumerate() {
            if !real[i] {
                continue;
            }
            let gold = targets[i];
            if gold >= vocab {
                return Err(Error::shape("smoothed_ce", format!("target {gold} outside vocabulary {vocab}")));
            }
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
            for (j, &z) in row.iter().enumerate() {
                let w = if j == gold { on } else { off };
                if w != T::zero() {
                    total += w * (lse - z);
                }
            }
        }
        let rg = self.any_grad(&[logits]);
        self.push(
            "smoothed_ce",
            Tensor::scalar(total),
            Op::SmoothedCe {
                logits,
                targets: targets.to_vec(),
                real: real.to_vec(),
                eps,
                probs,
            },
            rg,
        )
    }

    /// Gradients of the scalar `loss` with respect to every differentiable node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.backward_scaled(loss, T::one())
    }

    /// Like [`Graph::backward`] with the seed gradient set to `seed`.
    pub fn backward_scaled(&self, loss: Var, seed: T) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![seed]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[idx].take() else { continue };
            self.backward_node(node, &gout, &mut grads)?;
            grads[idx] = Some(gout);
        }
        let mut out: Vec<Option<Tensor<T>>> = Vec::with_capacity(grads.len());
        for (node, g) in self.nodes.iter().zip(grads) {
            out.push(match g {
                Some(g) if node.requires_grad => Some(Tensor::new(node.value.shape().to_vec(), g)?),
                _ => None,
            });
        }
        let params = self.params.iter().map(|(k, &v)| (k.clone(), v)).collect();
        Ok(Gradients { grads: out, params })
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut Vec<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = self.value(*a).matrix_dims("matmul")?;
                let n = self.value(*b).cols();
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.acc(grads, *a) {
                    kernels::matmul_bt_acc(g, bv, ga, m, n, k);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    kernels::matmul_at_acc(av, g, gb, m, k, n);
                }
            }
            Op::MatMulBt { a, b } => {
                let (m, k) = self.value(*a).matrix_dims("matmul_bt")?;
                let n = self.value(*b).rows();
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.acc(grads, *a) {
                    kernels::matmul_acc(g, bv, ga, m, n, k);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    kernels::matmul_at_acc(g, av, gb, m, n, k);
                }
            }
            Op::Linear { x, w, b } => {
                let (m, k) = self.value(*x).matrix_dims("linear")?;
                let n = self.value(*w).cols();
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                if let Some(gx) = self.acc(grads, *x) {
                    kernels::matmul_bt_acc(g, wv, gx, m, n, k);
                }
                if let Some(gw) = self.acc(grads, *w) {
                    kernels::matmul_at_acc(xv, g, gw, m, k, n);
                }
                if let Some(b) = b {
                    if let Some(gb) = self.acc(grads, *b) {
                        for row in g.chunks_exact(n) {
                            for (d, &v) in gb.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if let Some(gv) = self.acc(grads, v) {
                        for (d, &s) in gv.iter_mut().zip(g) {
                            *d += s;
                        }
                    }
                }
            }
            Op::Scale { x, factor } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (d, &s) in gx.iter_mut().zip(g) {
                        *d += s * *factor;
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, means, rstds } => {
                let xv = self.value(*x).data();
                let gam = self.value(*gamma).data();
                let cols = gam.len();
                let n = T::of(cols as f64);
                let mut xhat = vec![T::zero(); cols];
                let mut gh = vec![T::zero(); cols];
                let mut dgamma = vec![T::zero(); cols];
                let mut dbeta = vec![T::zero(); cols];
                let mut dx = vec![T::zero(); xv.len()];
                for (r, (xr, gr)) in xv.chunks_exact(cols).zip(g.chunks_exact(cols)).enumerate() {
                    let (mean, rstd) = (means[r], rstds[r]);
                    let mut mean_gh = T::zero();
                    let mut mean_gh_xhat = T::zero();
                    for c in 0..cols {
                        xhat[c] = (xr[c] - mean) * rstd;
                        gh[c] = gr[c] * gam[c];
                        mean_gh += gh[c];
                        mean_gh_xhat += gh[c] * xhat[c];
                        dgamma[c] += gr[c] * xhat[c];
                        dbeta[c] += gr[c];
                    }
                    mean_gh /= n;
                    mean_gh_xhat /= n;
                    for c in 0..cols {
                        dx[r * cols + c] = rstd * (gh[c] - mean_gh - xhat[c] * mean_gh_xhat);
                    }
                }
                add_into(self.acc(grads, *x), &dx);
                add_into(self.acc(grads, *gamma), &dgamma);
                add_into(self.acc(grads, *beta), &dbeta);
            }
            Op::Gelu { x } => {
                let factor = match self.fault {
                    Some(BackwardFault::ScaleGeluGrad(f)) => T::of(f),
                    None => T::one(),
                };
                let xv = self.value(*x).data();
                if let Some(gx) = self.acc(grads, *x) {
                    for ((d, &s), &xi) in gx.iter_mut().zip(g).zip(xv) {
                        *d += s * kernels::gelu_grad(xi) * factor;
                    }
                }
            }
            Op::Softmax { x } => {
                let y = node.value.data();
                let cols = node.value.cols();
                if let Some(gx) = self.acc(grads, *x) {
                    for ((yr, gr), dr) in y.chunks_exact(cols).zip(g.chunks_exact(cols)).zip(gx.chunks_exact_mut(cols)) {
                        let s: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for c in 0..cols {
                            dr[c] += yr[c] * (gr[c] - s);
                        }
                    }
                }
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (n_q, dim) = self.value(*q).matrix_dims("attention")?;
                let n_k = self.value(*k).rows();
                let (dq, dk, dv) = kernels::attention_backward(
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                    probs,
                    g,
                    n_q,
                    n_k,
                    dim,
                    *heads,
                );
                add_into(self.acc(grads, *q), &dq);
                add_into(self.acc(grads, *k), &dk);
                add_into(self.acc(grads, *v), &dv);
            }
            Op::Embedding { table, ids } => {
                let cols = self.value(*table).cols();
                if let Some(gt) = self.acc(grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..cols {
                            gt[id * cols + c] += g[r * cols + c];
                        }
                    }
                }
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    add_into(self.acc(grads, p), &g[offset..offset + n]);
                    offset += n;
                }
            }
            Op::SliceRows { x, start } => {
                let cols = self.value(*x).cols();
                if let Some(gx) = self.acc(grads, *x) {
                    for (d, &s) in gx[start * cols..].iter_mut().zip(g) {
                        *d += s;
                    }
                }
            }
            Op::MeanRows { x } => {
                let (rows, cols) = self.value(*x).matrix_dims("mean_rows")?;
                let inv = T::one() / T::of(rows as f64);
                if let Some(gx) = self.acc(grads, *x) {
                    for row in gx.chunks_exact_mut(cols) {
                        for (d, &s) in row.iter_mut().zip(g) {
                            *d += s * inv;
                        }
                    }
                }
            }
            Op::Sum { x } => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::SmoothedCe { logits, targets, real, eps, probs } => {
                let vocab = self.value(*logits).cols();
                let off = *eps / T::of((vocab - 1) as f64);
                let on = T::one() - *eps;
                if let Some(gl) = self.acc(grads, *logits) {
                    for (i, (pr, dr)) in probs.chunks_exact(vocab).zip(gl.chunks_exact_mut(vocab)).enumerate() {
                        if !real[i] {
                            continue;
                        }
                        for j in 0..vocab {
                            let target = if j == targets[i] { on } else { off };
                            dr[j] += g[0] * (pr[j] - target);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn add_into<T: Scalar>(dst: Option<&mut Vec<T>>, src: &[T]) {
    if let Some(dst) = dst {
        for (d, &s) in dst.iter_mut().zip(src) {
            *d += s;
        }
    }
}

/// Result of a backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(String, Var)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients of the trainable parameters that entered the graph, keyed by
    /// parameter name. Trainable parameters the loss does not depend on map to
    /// zero tensors; frozen parameters are absent.
    pub fn into_param_grads(mut self, graph: &Graph<T>) -> BTreeMap<String, Tensor<T>> {
        let mut out = BTreeMap::new();
        for (name, v) in std::mem::take(&mut self.params) {
            if !graph.requires_grad(v) {
                continue;
            }
            let g = self.grads[v.0]
                .take()
                .unwrap_or_else(|| Tensor::zeros(graph.value(v).shape()));
            out.insert(name, g);
        }
        out
    }
}
