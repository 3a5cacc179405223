//! Tape-based reverse-mode differentiation over row-major matrices.
//!
//! A [`Graph`] records every operation applied to its nodes. Parameters are
//! borrowed from a [`ParamStore`] rather than copied; after
//! [`Graph::backward`] their gradients are returned as a [`ParamGrads`]
//! indexed by [`ParamId`]. Frozen parameters never receive a gradient and no
//! gradient flows through subgraphs that depend only on frozen inputs.

use std::collections::HashMap;

use super::{ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<'a, T> {
    Owned(Tensor<T>),
    Borrowed(&'a Tensor<T>),
}

impl<T> Value<'_, T> {
    fn get(&self) -> &Tensor<T> {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

/// Shape bookkeeping for the fused attention primitive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnShape {
    pub batch: usize,
    pub q_len: usize,
    pub k_len: usize,
    pub heads: usize,
}

enum Op<T> {
    Constant,
    Leaf,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
        b_transposed: bool,
    },
    Add(Var, Var),
    Mul(Var, Var),
    AddBias {
        x: Var,
        bias: Var,
    },
    Scale {
        x: Var,
        s: T,
    },
    Relu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Softmax(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Concat(Vec<Var>),
    Gather {
        x: Var,
        rows: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        shape: AttnShape,
        probs: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<T>,
        count: usize,
    },
    Sum(Var),
    MaskMul {
        x: Var,
        mask: Vec<T>,
    },
}

struct Node<'a, T> {
    value: Value<'a, T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients of trainable parameters, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct ParamGrads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn new(num_params: usize) -> Self {
        Self {
            grads: vec![None; num_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.iter().all(|g| g.is_none())
    }

    /// Adds `other` into `self` elementwise.
    pub fn accumulate(&mut self, other: ParamGrads<T>) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (slot, g) in self.grads.iter_mut().zip(other.grads) {
            let Some(g) = g else { continue };
            match slot {
                Some(cur) => {
                    for (c, v) in cur.data_mut().iter_mut().zip(g.data()) {
                        *c += *v;
                    }
                }
                None => *slot = Some(g),
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}

/// Computation tape.
pub struct Graph<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
    store: Option<&'a ParamStore<T>>,
    param_nodes: HashMap<ParamId, Var>,
    grad_enabled: bool,
}

fn dims(t: &Tensor<impl Scalar>) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl<'a, T: Scalar> Default for Graph<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Graph<'a, T> {
    /// Graph without parameters; gradients only flow to [`Graph::leaf`] nodes.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            store: None,
            param_nodes: HashMap::new(),
            grad_enabled: true,
        }
    }

    pub fn with_params(store: &'a ParamStore<T>) -> Self {
        Self {
            store: Some(store),
            ..Self::new()
        }
    }

    /// Inference graph: nothing requires a gradient.
    pub fn inference(store: &'a ParamStore<T>) -> Self {
        Self {
            store: Some(store),
            grad_enabled: false,
            ..Self::new()
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad: needs_grad && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Parameter behind `v`, when `v` is a parameter node.
    pub fn param_of(&self, v: Var) -> Option<ParamId> {
        match self.nodes[v.0].op {
            Op::Param(id) => Some(id),
            _ => None,
        }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.nodes[v.0].value.get()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// Differentiable input not owned by a parameter store.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes.get(&id) {
            return *v;
        }
        let store = self.store.expect("graph has no parameter store");
        let needs = store.is_trainable(id) && self.grad_enabled;
        self.nodes.push(Node {
            value: Value::Borrowed(store.get(id)),
            op: Op::Param(id),
            needs_grad: needs,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    /// `a @ b`, or `a @ b^T` when `b_transposed`.
    pub fn matmul_opt(&mut self, a: Var, b: Var, b_transposed: bool) -> Result<Var> {
        let (m, k) = dims(self.value(a));
        let (br, bc) = dims(self.value(b));
        let (bk, n) = if b_transposed { (bc, br) } else { (br, bc) };
        if k != bk {
            return Err(Error::shape(
                "matmul",
                format!(
                    "lhs {:?} rhs {:?}{}",
                    self.value(a).shape(),
                    self.value(b).shape(),
                    if b_transposed { " (transposed)" } else { "" }
                ),
            ));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            false,
            b_transposed,
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            self.value(b).data(),
            T::zero(),
            &mut out,
        );
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::MatMul { a, b, b_transposed },
            needs,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_opt(a, b, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let ta = self.value(a);
        let data = ta
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x + *y)
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), needs))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let ta = self.value(a);
        let data = ta
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x * *y)
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Mul(a, b), needs))
    }

    /// Adds a row vector to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (rows, cols) = dims(self.value(x));
        if self.value(bias).len() != cols {
            return Err(Error::shape(
                "add_bias",
                format!(
                    "input {:?} bias {:?}",
                    self.value(x).shape(),
                    self.value(bias).shape()
                ),
            ));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for r in 0..rows {
            for (d, bv) in data[r * cols..(r + 1) * cols].iter_mut().zip(b) {
                *d += *bv;
            }
        }
        let t = Tensor::new(self.value(x).shape().to_vec(), data)?;
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(t, Op::AddBias { x, bias }, needs))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let tx = self.value(x);
        let t = Tensor::new(
            tx.shape().to_vec(),
            tx.data().iter().map(|v| *v * s).collect(),
        )
        .expect("same length");
        let needs = self.needs(x);
        self.push(t, Op::Scale { x, s }, needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let t = Tensor::new(
            tx.shape().to_vec(),
            tx.data().iter().map(|v| v.max(T::zero())).collect(),
        )
        .expect("same length");
        let needs = self.needs(x);
        self.push(t, Op::Relu(x), needs)
    }

    /// Row-wise layer normalisation followed by the affine map `gamma, beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (rows, cols) = dims(self.value(x));
        if self.value(gamma).len() != cols || self.value(beta).len() != cols {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "input {:?} gamma {:?} beta {:?}",
                    self.value(x).shape(),
                    self.value(gamma).shape(),
                    self.value(beta).shape()
                ),
            ));
        }
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let n = T::from_usize(cols).expect("cols");
        let mut xhat = vec![T::zero(); rows * cols];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            let row = &xs[r * cols..(r + 1) * cols];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * g[c] + b[c];
            }
        }
        let t = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            needs,
        ))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let (rows, cols) = dims(tx);
        let mut out = tx.data().to_vec();
        for r in 0..rows {
            softmax_in_place(&mut out[r * cols..(r + 1) * cols]);
        }
        let t = Tensor::new(tx.shape().to_vec(), out).expect("same length");
        let needs = self.needs(x);
        self.push(t, Op::Softmax(x), needs)
    }

    /// Gathers rows `ids` of `table` into a `[ids.len(), d]` matrix.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, d) = dims(self.value(table));
        if let Some(bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::shape(
                "embedding",
                format!("id {bad} outside table {:?}", self.value(table).shape()),
            ));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let t = Tensor::new(vec![ids.len(), d], out)?;
        let needs = self.needs(table);
        Ok(self.push(
            t,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    /// Stacks the rows of `parts` in order.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(Error::shape(
                    "concat",
                    format!("column mismatch {} vs {:?}", cols, t.shape()),
                ));
            }
            rows += t.rows();
            out.extend_from_slice(t.data());
        }
        let needs = parts.iter().any(|p| self.needs(*p));
        let t = Tensor::new(vec![rows, cols], out)?;
        Ok(self.push(t, Op::Concat(parts.to_vec()), needs))
    }

    /// Selects (and possibly repeats) rows of `x`.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (n, d) = dims(self.value(x));
        if let Some(bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::shape(
                "gather_rows",
                format!("row {bad} outside {:?}", self.value(x).shape()),
            ));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            out.extend_from_slice(&src[r * d..(r + 1) * d]);
        }
        let t = Tensor::new(vec![rows.len(), d], out)?;
        let needs = self.needs(x);
        Ok(self.push(
            t,
            Op::Gather {
                x,
                rows: rows.to_vec(),
            },
            needs,
        ))
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q` is `[batch * q_len, d]`, `k` and `v` are `[batch * k_len, d]`.
    /// `key_valid` (length `batch * k_len`) masks padded keys; with `causal`
    /// query `i` only sees keys `j <= i`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        shape: AttnShape,
        key_valid: &[bool],
        causal: bool,
    ) -> Result<Var> {
        let AttnShape {
            batch,
            q_len,
            k_len,
            heads,
        } = shape;
        let d = self.value(q).cols();
        let ok = heads > 0
            && d.is_multiple_of(heads)
            && self.value(q).rows() == batch * q_len
            && self.value(k).rows() == batch * k_len
            && self.value(v).rows() == batch * k_len
            && self.value(k).cols() == d
            && self.value(v).cols() == d
            && key_valid.len() == batch * k_len;
        if !ok {
            return Err(Error::shape(
                "attention",
                format!(
                    "q {:?} k {:?} v {:?} mask {} for {:?}",
                    self.value(q).shape(),
                    self.value(k).shape(),
                    self.value(v).shape(),
                    key_valid.len(),
                    shape
                ),
            ));
        }
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).expect("dh").sqrt();
        let qd = self.value(q).data();
        let kd = self.value(k).data();
        let vd = self.value(v).data();
        let mut probs = vec![T::zero(); batch * heads * q_len * k_len];
        let mut out = vec![T::zero(); batch * q_len * d];
        let mut scores = vec![T::zero(); k_len];
        for b in 0..batch {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..q_len {
                    let qrow = &qd[(b * q_len + i) * d + off..(b * q_len + i) * d + off + dh];
                    let mut max = T::neg_infinity();
                    for j in 0..k_len {
                        let allowed = key_valid[b * k_len + j] && (!causal || j <= i);
                        if allowed {
                            let krow =
                                &kd[(b * k_len + j) * d + off..(b * k_len + j) * d + off + dh];
                            let s = dot(qrow, krow) * scale;
                            scores[j] = s;
                            if s > max {
                                max = s;
                            }
                        } else {
                            scores[j] = T::neg_infinity();
                        }
                    }
                    let p = &mut probs[((b * heads + h) * q_len + i) * k_len..][..k_len];
                    if max == T::neg_infinity() {
                        continue;
                    }
                    let mut total = T::zero();
                    for j in 0..k_len {
                        let e = if scores[j] == T::neg_infinity() {
                            T::zero()
                        } else {
                            (scores[j] - max).exp()
                        };
                        p[j] = e;
                        total += e;
                    }
                    let orow = &mut out[(b * q_len + i) * d + off..(b * q_len + i) * d + off + dh];
                    for j in 0..k_len {
                        p[j] /= total;
                        if p[j] == T::zero() {
                            continue;
                        }
                        let vrow = &vd[(b * k_len + j) * d + off..(b * k_len + j) * d + off + dh];
                        for c in 0..dh {
                            orow[c] += p[j] * vrow[c];
                        }
                    }
                }
            }
        }
        let t = Tensor::new(vec![batch * q_len, d], out)?;
        let needs = self.needs(q) || self.needs(k) || self.needs(v);
        Ok(self.push(
            t,
            Op::Attention {
                q,
                k,
                v,
                shape,
                probs,
            },
            needs,
        ))
    }

    /// Attention weights of an attention node, laid out `[batch, heads, q_len, k_len]`.
    pub fn attention_probs(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Mean token cross-entropy over rows whose target is `Some`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (rows, cols) = dims(self.value(logits));
        if targets.len() != rows {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits {:?} targets {}", self.value(logits).shape(), targets.len()),
            ));
        }
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= cols) {
            return Err(Error::shape(
                "cross_entropy",
                format!("target {bad} outside {cols} classes"),
            ));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut total = T::zero();
        let mut count = 0;
        for r in 0..rows {
            let row = &mut probs[r * cols..(r + 1) * cols];
            softmax_in_place(row);
            if let Some(t) = targets[r] {
                total -= row[t].max(T::min_positive_value()).ln();
                count += 1;
            }
        }
        let loss = if count == 0 {
            T::zero()
        } else {
            total / T::from_usize(count).expect("count")
        };
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            needs,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    /// Multiplies by a constant mask (dropout).
    pub fn mask_mul(&mut self, x: Var, mask: Vec<T>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(Error::shape(
                "mask_mul",
                format!("input {:?} mask {}", self.value(x).shape(), mask.len()),
            ));
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(a, m)| *a * *m)
            .collect();
        let t = Tensor::new(self.value(x).shape().to_vec(), data)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::MaskMul { x, mask }, needs))
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Backward<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.backprop_node(i, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Ok(Backward { grads })
    }

    fn backprop_node(&self, i: usize, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Constant | Op::Leaf | Op::Param(_) => {}
            Op::MatMul { a, b, b_transposed } => {
                let (m, k) = dims(self.value(*a));
                let n = node.value.get().cols();
                if self.needs(*a) {
                    let ga = slot(grads, *a, m * k);
                    // dA = dC B^T  (or dC B when b is stored transposed)
                    T::gemm(
                        false,
                        !b_transposed,
                        m,
                        n,
                        k,
                        T::one(),
                        gy,
                        self.value(*b).data(),
                        T::one(),
                        ga,
                    );
                }
                if self.needs(*b) {
                    let gb = slot(grads, *b, k * n);
                    if *b_transposed {
                        T::gemm(true, false, n, m, k, T::one(), gy, self.value(*a).data(), T::one(), gb);
                    } else {
                        T::gemm(true, false, k, m, n, T::one(), self.value(*a).data(), gy, T::one(), gb);
                    }
                }
            }
            Op::Add(a, b) => {
                for x in [*a, *b] {
                    if self.needs(x) {
                        add_into(slot(grads, x, gy.len()), gy);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let other = self.value(*b).data();
                    let g = slot(grads, *a, gy.len());
                    for ((g, d), o) in g.iter_mut().zip(gy).zip(other) {
                        *g += *d * *o;
                    }
                }
                if self.needs(*b) {
                    let other = self.value(*a).data();
                    let g = slot(grads, *b, gy.len());
                    for ((g, d), o) in g.iter_mut().zip(gy).zip(other) {
                        *g += *d * *o;
                    }
                }
            }
            Op::AddBias { x, bias } => {
                if self.needs(*x) {
                    add_into(slot(grads, *x, gy.len()), gy);
                }
                if self.needs(*bias) {
                    let cols = self.value(*bias).len();
                    let g = slot(grads, *bias, cols);
                    for row in gy.chunks(cols) {
                        add_into(g, row);
                    }
                }
            }
            Op::Scale { x, s } => {
                if self.needs(*x) {
                    let g = slot(grads, *x, gy.len());
                    for (g, d) in g.iter_mut().zip(gy) {
                        *g += *d * *s;
                    }
                }
            }
            Op::Relu(x) => {
                if self.needs(*x) {
                    let out = node.value.get().data();
                    let g = slot(grads, *x, gy.len());
                    for ((g, d), o) in g.iter_mut().zip(gy).zip(out) {
                        if *o > T::zero() {
                            *g += *d;
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let cols = self.value(*gamma).len();
                let rows = gy.len() / cols;
                if self.needs(*gamma) {
                    let g = slot(grads, *gamma, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            g[c] += gy[r * cols + c] * xhat[r * cols + c];
                        }
                    }
                }
                if self.needs(*beta) {
                    let g = slot(grads, *beta, cols);
                    for row in gy.chunks(cols) {
                        add_into(g, row);
                    }
                }
                if self.needs(*x) {
                    let gam = self.value(*gamma).data();
                    let n = T::from_usize(cols).expect("cols");
                    let g = slot(grads, *x, gy.len());
                    let mut dxhat = vec![T::zero(); cols];
                    for r in 0..rows {
                        let mut mean_d = T::zero();
                        let mut mean_dx = T::zero();
                        for c in 0..cols {
                            let v = gy[r * cols + c] * gam[c];
                            dxhat[c] = v;
                            mean_d += v;
                            mean_dx += v * xhat[r * cols + c];
                        }
                        mean_d /= n;
                        mean_dx /= n;
                        for c in 0..cols {
                            g[r * cols + c] +=
                                rstd[r] * (dxhat[c] - mean_d - xhat[r * cols + c] * mean_dx);
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                if self.needs(*x) {
                    let y = node.value.get();
                    let cols = y.cols();
                    let g = slot(grads, *x, gy.len());
                    for (r, yr) in y.data().chunks(cols).enumerate() {
                        let dr = &gy[r * cols..(r + 1) * cols];
                        let inner: T = yr.iter().zip(dr).map(|(a, b)| *a * *b).sum();
                        for c in 0..cols {
                            g[r * cols + c] += yr[c] * (dr[c] - inner);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if self.needs(*table) {
                    let t = self.value(*table);
                    let d = t.cols();
                    let g = slot(grads, *table, t.len());
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut g[id * d..(id + 1) * d], &gy[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    if self.needs(*p) {
                        add_into(slot(grads, *p, n), &gy[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::Gather { x, rows } => {
                if self.needs(*x) {
                    let t = self.value(*x);
                    let d = t.cols();
                    let g = slot(grads, *x, t.len());
                    for (i, &r) in rows.iter().enumerate() {
                        add_into(&mut g[r * d..(r + 1) * d], &gy[i * d..(i + 1) * d]);
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                shape,
                probs,
            } => self.attention_backward(*q, *k, *v, *shape, probs, gy, grads),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                if self.needs(*logits) && *count > 0 {
                    let cols = self.value(*logits).cols();
                    let scale = gy[0] / T::from_usize(*count).expect("count");
                    let g = slot(grads, *logits, probs.len());
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = t else { continue };
                        for c in 0..cols {
                            let mut p = probs[r * cols + c];
                            if c == *t {
                                p -= T::one();
                            }
                            g[r * cols + c] += p * scale;
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if self.needs(*x) {
                    let n = self.value(*x).len();
                    for g in slot(grads, *x, n).iter_mut() {
                        *g += gy[0];
                    }
                }
            }
            Op::MaskMul { x, mask } => {
                if self.needs(*x) {
                    let g = slot(grads, *x, gy.len());
                    for ((g, d), m) in g.iter_mut().zip(gy).zip(mask) {
                        *g += *d * *m;
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        shape: AttnShape,
        probs: &[T],
        gy: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let AttnShape {
            batch,
            q_len,
            k_len,
            heads,
        } = shape;
        let d = self.value(q).cols();
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).expect("dh").sqrt();
        let qd = self.value(q).data();
        let kd = self.value(k).data();
        let vd = self.value(v).data();
        let mut gq = vec![T::zero(); qd.len()];
        let mut gk = vec![T::zero(); kd.len()];
        let mut gv = vec![T::zero(); vd.len()];
        let mut dp = vec![T::zero(); k_len];
        for b in 0..batch {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..q_len {
                    let p = &probs[((b * heads + h) * q_len + i) * k_len..][..k_len];
                    let qi = (b * q_len + i) * d + off;
                    let go = &gy[qi..qi + dh];
                    let mut inner = T::zero();
                    for j in 0..k_len {
                        if p[j] == T::zero() {
                            dp[j] = T::zero();
                            continue;
                        }
                        let vj = (b * k_len + j) * d + off;
                        dp[j] = dot(go, &vd[vj..vj + dh]);
                        inner += dp[j] * p[j];
                        for c in 0..dh {
                            gv[vj + c] += p[j] * go[c];
                        }
                    }
                    for j in 0..k_len {
                        if p[j] == T::zero() {
                            continue;
                        }
                        let ds = p[j] * (dp[j] - inner) * scale;
                        let kj = (b * k_len + j) * d + off;
                        for c in 0..dh {
                            gq[qi + c] += ds * kd[kj + c];
                            gk[kj + c] += ds * qd[qi + c];
                        }
                    }
                }
            }
        }
        for (x, g) in [(q, gq), (k, gk), (v, gv)] {
            if self.needs(x) {
                add_into(slot(grads, x, g.len()), &g);
            }
        }
    }

    /// Collects parameter gradients from a finished reverse pass.
    pub fn param_grads(&self, back: &Backward<T>) -> ParamGrads<T> {
        let n = self.store.map(|s| s.len()).unwrap_or(0);
        let mut out = ParamGrads::new(n);
        for (id, var) in &self.param_nodes {
            if let Some(g) = &back.grads[var.0] {
                let shape = self.value(*var).shape().to_vec();
                out.grads[id.0] = Some(Tensor::new(shape, g.clone()).expect("grad shape"));
            }
        }
        out
    }
}

/// Result of [`Graph::backward`].
pub struct Backward<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Backward<T> {
    /// Gradient with respect to a node, if one reached it.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn slot<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
