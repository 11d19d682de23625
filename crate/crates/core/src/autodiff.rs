//! Reverse-mode automatic differentiation over an append-only tape.
//!
//! Every forward op appends one node holding its output value. [`Tape::backward`]
//! walks the nodes in strict reverse creation order and consumes the tape.
//! Nodes whose inputs are all constants (or frozen parameters) carry no
//! gradient and are skipped.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    pub fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Elu => {
                if x > S::zero() {
                    x
                } else {
                    // absolute error stays at machine epsilon for x <= 0
                    x.exp() - S::one()
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => x.max(S::zero()),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative<S: Scalar>(self, x: S, y: S) -> S {
        match self {
            Activation::Elu => {
                if x > S::zero() {
                    S::one()
                } else {
                    y + S::one()
                }
            }
            Activation::Tanh => S::one() - y * y,
            Activation::Sigmoid => y * (S::one() - y),
            Activation::Relu => {
                if x > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "elu" => Ok(Activation::Elu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Activation::Elu => "elu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
        };
        f.write_str(s)
    }
}

pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    MulCol(Var, Var),
    Affine(Var, S),
    Act(Var, Activation),
    Softmax {
        x: Var,
        axis_len: usize,
        inner: usize,
    },
    ConcatCols(Var, Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
    Gather(Var, Arc<[usize]>),
    Scatter(Var, Arc<[usize]>),
    Reshape(Var),
    Sum(Var),
    Mse(Var, Var),
    #[cfg(test)]
    BrokenSquare(Var),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    params: Vec<(String, Var)>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// A constant: no gradient flows into it.
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable input.
    pub fn input(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Loads a named parameter; frozen parameters enter as constants.
    pub fn param(&mut self, store: &ParamStore<S>, name: &str) -> Result<Var> {
        if let Some((_, v)) = self.params.iter().find(|(n, _)| n == name) {
            return Ok(*v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| Error::Usage(format!("unknown parameter `{name}`")))?
            .clone();
        let v = self.push(t, Op::Leaf, !store.is_frozen(name));
        self.params.push((name.to_string(), v));
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// `x[m×n] + b[n]`, with `b` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if self.value(b).len() != n {
            return Err(Error::dim(
                "add_bias",
                format!("{:?} + {:?}", self.shape(x), self.shape(b)),
            ));
        }
        let xv = self.value(x).data();
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(m * n);
        for row in xv.chunks_exact(n.max(1)) {
            out.extend(row.iter().zip(bv).map(|(&p, &q)| p + q));
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(Tensor::raw(vec![m, n], out), Op::AddBias(x, b), rg))
    }

    /// `x[m×n] * w[m×1]`, scaling each row by its weight.
    pub fn mul_col(&mut self, x: Var, w: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if self.value(w).len() != m {
            return Err(Error::dim(
                "mul_col",
                format!("{:?} * {:?}", self.shape(x), self.shape(w)),
            ));
        }
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = Vec::with_capacity(m * n);
        for (row, &s) in xv.chunks_exact(n.max(1)).zip(wv) {
            out.extend(row.iter().map(|&p| p * s));
        }
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(Tensor::raw(vec![m, n], out), Op::MulCol(x, w), rg))
    }

    /// `scale · x + shift`.
    pub fn affine(&mut self, x: Var, scale: S, shift: S) -> Var {
        let out = self.value(x).map(|v| v * scale + shift);
        let rg = self.rg(x);
        self.push(out, Op::Affine(x, scale), rg)
    }

    pub fn scale(&mut self, x: Var, scale: S) -> Var {
        self.affine(x, scale, S::zero())
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let out = self.value(x).map(|v| kind.apply(v));
        let rg = self.rg(x);
        self.push(out, Op::Act(x, kind), rg)
    }

    /// Softmax along `axis`; entries where `mask` is `false` are excluded and set to exactly 0.
    pub fn softmax_axis(&mut self, x: Var, axis: usize, mask: Option<&[bool]>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(
                "softmax_axis",
                format!("axis {axis} out of range for {shape:?}"),
            ));
        }
        let xv = self.value(x).data();
        if let Some(m) = mask {
            if m.len() != xv.len() {
                return Err(Error::dim(
                    "softmax_axis",
                    format!("mask has {} entries for shape {shape:?}", m.len()),
                ));
            }
        }
        let axis_len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let keep = |p: usize| mask.is_none_or(|m| m[p]);
        let mut out = vec![S::zero(); xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * axis_len * inner + i;
                let idx = |a: usize| base + a * inner;
                let mut max = S::neg_infinity();
                let mut kept = false;
                for a in 0..axis_len {
                    if keep(idx(a)) {
                        kept = true;
                        max = max.max(xv[idx(a)]);
                    }
                }
                // non-finite logits propagate as NaN; only a fully masked slice is an error
                if !kept {
                    return Err(Error::DegenerateSlice {
                        slice: o * inner + i,
                    });
                }
                let mut total = S::zero();
                for a in 0..axis_len {
                    let p = idx(a);
                    if keep(p) {
                        let e = (xv[p] - max).exp();
                        out[p] = e;
                        total += e;
                    }
                }
                for a in 0..axis_len {
                    out[idx(a)] /= total;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::raw(shape, out),
            Op::Softmax { x, axis_len, inner },
            rg,
        ))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, na) = self.value(a).dims2()?;
        let (mb, nb) = self.value(b).dims2()?;
        if m != mb {
            return Err(Error::dim("concat_cols", format!("{m} rows vs {mb} rows")));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(m * (na + nb));
        for r in 0..m {
            out.extend_from_slice(&av[r * na..(r + 1) * na]);
            out.extend_from_slice(&bv[r * nb..(r + 1) * nb]);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::raw(vec![m, na + nb], out),
            Op::ConcatCols(a, b),
            rg,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if start + width > n {
            return Err(Error::dim(
                "slice_cols",
                format!("{start}+{width} > {n} columns"),
            ));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(m * width);
        for r in 0..m {
            out.extend_from_slice(&xv[r * n + start..r * n + start + width]);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::raw(vec![m, width], out),
            Op::SliceCols { x, start },
            rg,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if start + count > m {
            return Err(Error::dim("slice_rows", format!("{start}+{count} > {m} rows")));
        }
        let out = self.value(x).data()[start * n..(start + count) * n].to_vec();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::raw(vec![count, n], out),
            Op::SliceRows { x, start },
            rg,
        ))
    }

    /// `out[r] = x[idx[r]]`.
    pub fn gather_rows(&mut self, x: Var, idx: Arc<[usize]>) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(Error::dim("gather_rows", format!("row {bad} of {m}")));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx.iter() {
            out.extend_from_slice(&xv[i * n..(i + 1) * n]);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::raw(vec![idx.len(), n], out),
            Op::GatherRows(x, idx),
            rg,
        ))
    }

    /// `out[idx[r]] += x[r]` into a zero matrix with `rows` rows.
    pub fn scatter_add_rows(&mut self, x: Var, idx: Arc<[usize]>, rows: usize) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if idx.len() != m {
            return Err(Error::dim(
                "scatter_add_rows",
                format!("{} indices for {m} rows", idx.len()),
            ));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::dim("scatter_add_rows", format!("row {bad} of {rows}")));
        }
        let xv = self.value(x).data();
        let mut out = vec![S::zero(); rows * n];
        for (r, &i) in idx.iter().enumerate() {
            for c in 0..n {
                out[i * n + c] += xv[r * n + c];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::raw(vec![rows, n], out),
            Op::ScatterAddRows(x, idx),
            rg,
        ))
    }

    /// Flat gather `out[p] = x[idx[p]]`, shaped as `shape`.
    pub fn gather(&mut self, x: Var, idx: Arc<[usize]>, shape: &[usize]) -> Result<Var> {
        let len = self.value(x).len();
        if shape.iter().product::<usize>() != idx.len() {
            return Err(Error::dim("gather", format!("{} indices for {shape:?}", idx.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= len) {
            return Err(Error::dim("gather", format!("index {bad} of {len}")));
        }
        let xv = self.value(x).data();
        let out = idx.iter().map(|&i| xv[i]).collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::raw(shape.to_vec(), out), Op::Gather(x, idx), rg))
    }

    /// Flat scatter `out[idx[p]] = x[p]` into zeros of `shape`; `idx` must be injective.
    pub fn scatter(&mut self, x: Var, idx: Arc<[usize]>, shape: &[usize]) -> Result<Var> {
        let len: usize = shape.iter().product();
        if idx.len() != self.value(x).len() {
            return Err(Error::dim(
                "scatter",
                format!("{} indices for {} values", idx.len(), self.value(x).len()),
            ));
        }
        let mut out = vec![S::zero(); len];
        let mut seen = vec![false; len];
        for (&i, &v) in idx.iter().zip(self.value(x).data()) {
            if i >= len || seen[i] {
                return Err(Error::dim("scatter", format!("index {i} invalid or repeated")));
            }
            seen[i] = true;
            out[i] = v;
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::raw(shape.to_vec(), out), Op::Scatter(x, idx), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(out, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum(x);
        self.scale(s, S::one() / S::lit(n as f64))
    }

    /// Mean squared error over all entries.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let n = self.value(a).len().max(1);
        let total: S = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::scalar(total / S::lit(n as f64)),
            Op::Mse(a, b),
            rg,
        ))
    }

    /// `x²` with a deliberately wrong derivative, for exercising the gradient checker.
    #[cfg(test)]
    pub(crate) fn broken_square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        let rg = self.rg(x);
        self.push(out, Op::BrokenSquare(x), rg)
    }

    /// Propagates d`loss` back through the tape and consumes it.
    pub fn backward(self, loss: Var) -> Result<Gradients<S>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let Tape { nodes, params } = self;
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; nodes.len()];
        if nodes[loss.0].requires_grad {
            let shape = nodes[loss.0].value.shape().to_vec();
            grads[loss.0] = Some(Tensor::full(&shape, S::one()));
        }
        for id in (0..nodes.len()).rev() {
            if !nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            if matches!(nodes[id].op, Op::Leaf) {
                grads[id] = Some(g);
            } else {
                backprop(&nodes, id, g, &mut grads);
            }
        }
        let names = params.into_iter().collect();
        Ok(Gradients {
            grads,
            names,
            requires: nodes.iter().map(|n| n.requires_grad).collect(),
        })
    }
}

fn accumulate<S: Scalar>(
    nodes: &[Node<S>],
    grads: &mut [Option<Tensor<S>>],
    v: Var,
    g: Tensor<S>,
) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn backprop<S: Scalar>(nodes: &[Node<S>], id: usize, mut g: Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
    let node = &nodes[id];
    let val = |v: Var| &nodes[v.0].value;
    let rg = |v: Var| nodes[v.0].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = val(*a).dims2().expect("matmul lhs");
            let (_, n) = val(*b).dims2().expect("matmul rhs");
            if rg(*a) {
                let mut da = vec![S::zero(); m * k];
                S::gemm(m, n, k, g.data(), false, val(*b).data(), true, &mut da, false);
                accumulate(nodes, grads, *a, Tensor::raw(val(*a).shape().to_vec(), da));
            }
            if rg(*b) {
                let mut db = vec![S::zero(); k * n];
                S::gemm(k, m, n, val(*a).data(), true, g.data(), false, &mut db, false);
                accumulate(nodes, grads, *b, Tensor::raw(val(*b).shape().to_vec(), db));
            }
        }
        Op::Add(a, b) => {
            if rg(*a) && rg(*b) {
                accumulate(nodes, grads, *a, g.clone());
            }
            let last = if rg(*b) { *b } else { *a };
            accumulate(nodes, grads, last, g);
        }
        Op::Sub(a, b) => {
            if rg(*a) {
                accumulate(nodes, grads, *a, g.clone());
            }
            if rg(*b) {
                g.data_mut().iter_mut().for_each(|v| *v = -*v);
                accumulate(nodes, grads, *b, g);
            }
        }
        Op::Mul(a, b) => {
            if rg(*a) {
                accumulate(nodes, grads, *a, g.zip_map(val(*b), |p, q| p * q));
            }
            if rg(*b) {
                for (p, &q) in g.data_mut().iter_mut().zip(val(*a).data()) {
                    *p *= q;
                }
                accumulate(nodes, grads, *b, g);
            }
        }
        Op::AddBias(x, b) => {
            if rg(*b) {
                let n = val(*b).len();
                let mut db = vec![S::zero(); n];
                for row in g.data().chunks_exact(n.max(1)) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                accumulate(nodes, grads, *b, Tensor::raw(val(*b).shape().to_vec(), db));
            }
            accumulate(nodes, grads, *x, g);
        }
        Op::MulCol(x, w) => {
            let n = g.shape().last().copied().unwrap_or(1).max(1);
            let wv = val(*w).data();
            if rg(*x) {
                let mut dx = Vec::with_capacity(g.len());
                for (row, &s) in g.data().chunks_exact(n).zip(wv) {
                    dx.extend(row.iter().map(|&p| p * s));
                }
                accumulate(nodes, grads, *x, Tensor::raw(g.shape().to_vec(), dx));
            }
            if rg(*w) {
                let dw = g
                    .data()
                    .chunks_exact(n)
                    .zip(val(*x).data().chunks_exact(n))
                    .map(|(gr, xr)| gr.iter().zip(xr).map(|(&p, &q)| p * q).sum())
                    .collect();
                accumulate(nodes, grads, *w, Tensor::raw(val(*w).shape().to_vec(), dw));
            }
        }
        Op::Affine(x, scale) => {
            let s = *scale;
            g.data_mut().iter_mut().for_each(|v| *v *= s);
            accumulate(nodes, grads, *x, g);
        }
        Op::Act(x, kind) => {
            let xv = val(*x).data();
            let yv = node.value.data();
            for (gi, (&xi, &yi)) in g.data_mut().iter_mut().zip(xv.iter().zip(yv)) {
                *gi *= kind.derivative(xi, yi);
            }
            accumulate(nodes, grads, *x, g);
        }
        Op::Softmax { x, axis_len, inner } => {
            let (axis_len, inner) = (*axis_len, *inner);
            let y = node.value.data();
            let gd = g.data();
            let outer = y.len() / (axis_len * inner).max(1);
            let mut dx = vec![S::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * axis_len * inner + i;
                    let dot: S = (0..axis_len)
                        .map(|a| y[base + a * inner] * gd[base + a * inner])
                        .sum();
                    for a in 0..axis_len {
                        let p = base + a * inner;
                        dx[p] = y[p] * (gd[p] - dot);
                    }
                }
            }
            accumulate(nodes, grads, *x, Tensor::raw(g.shape().to_vec(), dx));
        }
        Op::ConcatCols(a, b) => {
            let (m, na) = val(*a).dims2().expect("concat lhs");
            let (_, nb) = val(*b).dims2().expect("concat rhs");
            let gd = g.data();
            if rg(*a) {
                let mut da = Vec::with_capacity(m * na);
                for r in 0..m {
                    da.extend_from_slice(&gd[r * (na + nb)..r * (na + nb) + na]);
                }
                accumulate(nodes, grads, *a, Tensor::raw(val(*a).shape().to_vec(), da));
            }
            if rg(*b) {
                let mut db = Vec::with_capacity(m * nb);
                for r in 0..m {
                    db.extend_from_slice(&gd[r * (na + nb) + na..(r + 1) * (na + nb)]);
                }
                accumulate(nodes, grads, *b, Tensor::raw(val(*b).shape().to_vec(), db));
            }
        }
        Op::SliceCols { x, start } => {
            let (m, n) = val(*x).dims2().expect("slice source");
            let (_, w) = g.dims2().expect("slice grad");
            let mut dx = vec![S::zero(); m * n];
            for r in 0..m {
                dx[r * n + start..r * n + start + w].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
            }
            accumulate(nodes, grads, *x, Tensor::raw(val(*x).shape().to_vec(), dx));
        }
        Op::SliceRows { x, start } => {
            let (m, n) = val(*x).dims2().expect("slice source");
            let mut dx = vec![S::zero(); m * n];
            dx[start * n..start * n + g.len()].copy_from_slice(g.data());
            accumulate(nodes, grads, *x, Tensor::raw(val(*x).shape().to_vec(), dx));
        }
        Op::GatherRows(x, idx) => {
            let (m, n) = val(*x).dims2().expect("gather source");
            let mut dx = vec![S::zero(); m * n];
            let gd = g.data();
            for (r, &i) in idx.iter().enumerate() {
                for c in 0..n {
                    dx[i * n + c] += gd[r * n + c];
                }
            }
            accumulate(nodes, grads, *x, Tensor::raw(val(*x).shape().to_vec(), dx));
        }
        Op::ScatterAddRows(x, idx) => {
            let (m, n) = val(*x).dims2().expect("scatter source");
            let gd = g.data();
            let mut dx = Vec::with_capacity(m * n);
            for &i in idx.iter() {
                dx.extend_from_slice(&gd[i * n..(i + 1) * n]);
            }
            accumulate(nodes, grads, *x, Tensor::raw(val(*x).shape().to_vec(), dx));
        }
        Op::Gather(x, idx) => {
            let mut dx = vec![S::zero(); val(*x).len()];
            for (&i, &gv) in idx.iter().zip(g.data()) {
                dx[i] += gv;
            }
            accumulate(nodes, grads, *x, Tensor::raw(val(*x).shape().to_vec(), dx));
        }
        Op::Scatter(x, idx) => {
            let gd = g.data();
            let dx = idx.iter().map(|&i| gd[i]).collect();
            accumulate(nodes, grads, *x, Tensor::raw(val(*x).shape().to_vec(), dx));
        }
        Op::Reshape(x) => {
            let dx = Tensor::raw(val(*x).shape().to_vec(), g.into_data());
            accumulate(nodes, grads, *x, dx);
        }
        Op::Sum(x) => {
            let gv = g.data()[0];
            accumulate(nodes, grads, *x, Tensor::full(val(*x).shape(), gv));
        }
        Op::Mse(a, b) => {
            let n = val(*a).len().max(1);
            let c = g.data()[0] * S::lit(2.0) / S::lit(n as f64);
            let diff = val(*a).zip_map(val(*b), |p, q| (p - q) * c);
            if rg(*b) {
                accumulate(nodes, grads, *b, diff.map(|v| -v));
            }
            accumulate(nodes, grads, *a, diff);
        }
        #[cfg(test)]
        Op::BrokenSquare(x) => {
            // true derivative is 2x
            let d = g.zip_map(val(*x), |p, q| p * q * S::lit(3.0));
            accumulate(nodes, grads, *x, d);
        }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
    names: HashMap<String, Var>,
    requires: Vec<bool>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of a leaf node (input or parameter); `None` when unreachable.
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires.get(v.0).copied().unwrap_or(false)
    }

    /// Gradients keyed by parameter name; frozen parameters are absent.
    pub fn named(&self) -> HashMap<String, Tensor<S>> {
        let mut out = HashMap::new();
        for (name, v) in &self.names {
            if !self.requires[v.0] {
                continue;
            }
            if let Some(g) = &self.grads[v.0] {
                out.insert(name.clone(), g.clone());
            }
        }
        out
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.names.keys().map(|s| s.as_str())
    }
}
