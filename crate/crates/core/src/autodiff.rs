//! Minimal reverse-mode automatic differentiation over dense `f64`
//! tensors.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its
//! forward value and the indices of its parents. [`Graph::backward`]
//! walks the tape in reverse from a scalar root and accumulates
//! gradients into every node that requires them. Graphs are rebuilt
//! each training step; persistent state (weights, optimizer moments)
//! lives outside in [`Parameter`] and [`Adam`].
//!
//! Forward evaluation is deterministic: identical inputs produce
//! bit-identical outputs (plain loops, no threading, no fast-math).
//! There is no broadcasting beyond scalar-times-tensor and the
//! explicit row-vector [`Graph::add_bias`]; shape mismatches are
//! errors, not silent promotions.

use serde::{Deserialize, Serialize};
use std::rc::Rc;

use crate::error::{Error, Result};

/// Dense row-major tensor. Rank 0 (scalar), 1, and 2 are used.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                detail: format!("shape {shape:?} needs {len} values, got {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(x: f64) -> Self {
        Self { shape: vec![], data: vec![x] }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self { shape, data: vec![0.0; len] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Rows of a rank-2 tensor (a rank-1 tensor counts as one row).
    fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => 1,
        }
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Operation kinds accepted by [`Graph::apply`].
#[derive(Debug, Clone)]
pub enum OpKind {
    Matmul,
    Add,
    Multiply,
    Relu,
    Sum,
    Mean,
    Square,
    Concat,
    IndexSelect(Rc<Vec<usize>>),
    ScalarScale(f64),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Concat(Var, Var),
    IndexSelect(Var, Rc<Vec<usize>>),
    TakePerRow(Var, Rc<Vec<usize>>),
    PairwiseSqDist(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Reverse-mode tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a leaf tensor. Gradients are tracked iff `requires_grad`.
    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.input(value, false)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(Tensor::scalar(x))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` root with respect to `v`, if
    /// `v` tracks gradients and backward has run.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(Error::InvalidHandle { index: v.0, len: self.nodes.len() });
        }
        Ok(())
    }

    fn needs_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Dispatch one of the named operation kinds.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = match kind {
            OpKind::Matmul | OpKind::Add | OpKind::Multiply | OpKind::Concat => 2,
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::ShapeMismatch {
                op: "apply",
                detail: format!("{kind:?} takes {arity} inputs, got {}", inputs.len()),
            });
        }
        match kind {
            OpKind::Matmul => self.matmul(inputs[0], inputs[1]),
            OpKind::Add => self.add(inputs[0], inputs[1]),
            OpKind::Multiply => self.mul(inputs[0], inputs[1]),
            OpKind::Relu => self.relu(inputs[0]),
            OpKind::Sum => self.sum(inputs[0]),
            OpKind::Mean => self.mean(inputs[0]),
            OpKind::Square => self.square(inputs[0]),
            OpKind::Concat => self.concat(inputs[0], inputs[1]),
            OpKind::IndexSelect(idx) => self.index_select(inputs[0], idx),
            OpKind::ScalarScale(c) => self.scale(inputs[0], c),
        }
    }

    fn binary_elementwise(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape != tb.shape {
            return Err(Error::ShapeMismatch {
                op: op_name,
                detail: format!("{:?} vs {:?}", ta.shape, tb.shape),
            });
        }
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor { shape: ta.shape.clone(), data };
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("multiply", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `(m×k) · (k×n) → (m×n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape.len() != 2 || tb.shape.len() != 2 || ta.shape[1] != tb.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} · {:?}", ta.shape, tb.shape),
            });
        }
        let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = ta.data[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &tb.data[p * n..(p + 1) * n];
                let out = &mut data[i * n..(i + 1) * n];
                for (o, &bv) in out.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        let value = Tensor { shape: vec![m, n], data };
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Add a length-`n` row vector to every row of an `(m×n)` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        self.check(a)?;
        self.check(bias)?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[bias.0].value);
        if ta.shape.len() != 2 || tb.shape.len() != 1 || ta.shape[1] != tb.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                detail: format!("{:?} + row {:?}", ta.shape, tb.shape),
            });
        }
        let n = tb.shape[0];
        let data = ta
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| x + tb.data[i % n])
            .collect();
        let value = Tensor { shape: ta.shape.clone(), data };
        let rg = self.needs_grad(&[a, bias]);
        Ok(self.push(value, Op::AddBias(a, bias), rg))
    }

    fn unary(
        &mut self,
        a: Var,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.check(a)?;
        let ta = &self.nodes[a.0].value;
        let data = ta.data.iter().map(|&x| f(x)).collect();
        let value = Tensor { shape: ta.shape.clone(), data };
        let rg = self.needs_grad(&[a]);
        Ok(self.push(value, op, rg))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    /// Elementwise square root. The derivative at exactly 0 is taken
    /// as 0 (subgradient convention, like `relu`).
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// Clamp into `[lo, hi]`; gradient passes only strictly inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if !(lo <= hi) {
            return Err(Error::InvalidArgument(format!("clamp bounds [{lo}, {hi}]")));
        }
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// Multiply every element by the constant `c` (scalar_scale).
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let total: f64 = self.nodes[a.0].value.data.iter().sum();
        let rg = self.needs_grad(&[a]);
        Ok(self.push(Tensor::scalar(total), Op::Sum(a), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let ta = &self.nodes[a.0].value;
        if ta.data.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "mean",
                detail: "empty tensor".into(),
            });
        }
        let m = ta.data.iter().sum::<f64>() / ta.data.len() as f64;
        let rg = self.needs_grad(&[a]);
        Ok(self.push(Tensor::scalar(m), Op::Mean(a), rg))
    }

    /// Stack two matrices (or vectors) along the row axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.cols() != tb.cols() {
            return Err(Error::ShapeMismatch {
                op: "concat",
                detail: format!("{:?} over {:?}", ta.shape, tb.shape),
            });
        }
        let cols = ta.cols();
        let rows = ta.rows() + tb.rows();
        let mut data = Vec::with_capacity(rows * cols);
        data.extend_from_slice(&ta.data);
        data.extend_from_slice(&tb.data);
        let value = Tensor { shape: vec![rows, cols], data };
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(value, Op::Concat(a, b), rg))
    }

    /// Gather rows of a matrix by index (repeats allowed).
    pub fn index_select(&mut self, a: Var, indices: Rc<Vec<usize>>) -> Result<Var> {
        self.check(a)?;
        let ta = &self.nodes[a.0].value;
        let (rows, cols) = (ta.rows(), ta.cols());
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::ShapeMismatch {
                op: "index_select",
                detail: format!("row {bad} out of range for {rows} rows"),
            });
        }
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices.iter() {
            data.extend_from_slice(&ta.data[i * cols..(i + 1) * cols]);
        }
        let value = Tensor { shape: vec![indices.len(), cols], data };
        let rg = self.needs_grad(&[a]);
        Ok(self.push(value, Op::IndexSelect(a, indices), rg))
    }

    /// From an `(m×n)` matrix take element `cols[i]` of row `i`,
    /// producing a length-`m` vector (per-row gather).
    pub fn take_per_row(&mut self, a: Var, cols: Rc<Vec<usize>>) -> Result<Var> {
        self.check(a)?;
        let ta = &self.nodes[a.0].value;
        if ta.shape.len() != 2 || ta.shape[0] != cols.len() {
            return Err(Error::ShapeMismatch {
                op: "take_per_row",
                detail: format!("{:?} with {} column indices", ta.shape, cols.len()),
            });
        }
        let n = ta.shape[1];
        if let Some(&bad) = cols.iter().find(|&&c| c >= n) {
            return Err(Error::ShapeMismatch {
                op: "take_per_row",
                detail: format!("column {bad} out of range for {n} columns"),
            });
        }
        let data = cols.iter().enumerate().map(|(i, &c)| ta.data[i * n + c]).collect();
        let value = Tensor { shape: vec![cols.len()], data };
        let rg = self.needs_grad(&[a]);
        Ok(self.push(value, Op::TakePerRow(a, cols), rg))
    }

    /// Squared Euclidean distances between all row pairs:
    /// `(m×d), (k×d) → (m×k)` with `out[i][j] = ‖a_i − b_j‖²`.
    pub fn pairwise_sqdist(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape.len() != 2 || tb.shape.len() != 2 || ta.shape[1] != tb.shape[1] {
            return Err(Error::ShapeMismatch {
                op: "pairwise_sqdist",
                detail: format!("{:?} vs {:?}", ta.shape, tb.shape),
            });
        }
        let (m, k, d) = (ta.shape[0], tb.shape[0], ta.shape[1]);
        let mut data = vec![0.0; m * k];
        for i in 0..m {
            let xi = &ta.data[i * d..(i + 1) * d];
            for j in 0..k {
                let yj = &tb.data[j * d..(j + 1) * d];
                let mut s = 0.0;
                for (x, y) in xi.iter().zip(yj) {
                    let diff = x - y;
                    s += diff * diff;
                }
                data[i * k + j] = s;
            }
        }
        let value = Tensor { shape: vec![m, k], data };
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(value, Op::PairwiseSqDist(a, b), rg))
    }

    /// Reverse sweep from a scalar root. Gradients accumulate across
    /// shared subexpressions and are stored on every node created
    /// with `requires_grad`.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        self.check(root)?;
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::NonScalarRoot {
                shape: self.nodes[root.0].value.shape.clone(),
            });
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate_parents(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.requires_grad {
                node.grad = g.or_else(|| Some(vec![0.0; node.value.data.len()]));
            }
        }
        Ok(())
    }

    fn accumulate_parents(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let add_into = |grads: &mut [Option<Vec<f64>>],
                        nodes: &[Node],
                        v: Var,
                        contrib: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0]
                .get_or_insert_with(|| vec![0.0; nodes[v.0].value.data.len()]);
            contrib(slot);
        };

        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_into(grads, &self.nodes, *a, &mut |s| {
                    for (si, gi) in s.iter_mut().zip(g) {
                        *si += gi;
                    }
                });
                add_into(grads, &self.nodes, *b, &mut |s| {
                    for (si, gi) in s.iter_mut().zip(g) {
                        *si += gi;
                    }
                });
            }
            Op::Sub(a, b) => {
                add_into(grads, &self.nodes, *a, &mut |s| {
                    for (si, gi) in s.iter_mut().zip(g) {
                        *si += gi;
                    }
                });
                add_into(grads, &self.nodes, *b, &mut |s| {
                    for (si, gi) in s.iter_mut().zip(g) {
                        *si -= gi;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (da, db) = (&self.nodes[a.0].value.data, &self.nodes[b.0].value.data);
                add_into(grads, &self.nodes, *a, &mut |s| {
                    for ((si, gi), bv) in s.iter_mut().zip(g).zip(db) {
                        *si += gi * bv;
                    }
                });
                add_into(grads, &self.nodes, *b, &mut |s| {
                    for ((si, gi), av) in s.iter_mut().zip(g).zip(da) {
                        *si += gi * av;
                    }
                });
            }
            Op::MatMul(a, b) => {
                let ta = &self.nodes[a.0].value;
                let tb = &self.nodes[b.0].value;
                let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
                // dA = G · Bᵀ
                add_into(grads, &self.nodes, *a, &mut |s| {
                    for i2 in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[i2 * n + j] * tb.data[p * n + j];
                            }
                            s[i2 * k + p] += acc;
                        }
                    }
                });
                // dB = Aᵀ · G
                add_into(grads, &self.nodes, *b, &mut |s| {
                    for p in 0..k {
                        for i2 in 0..m {
                            let av = ta.data[i2 * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                s[p * n + j] += av * g[i2 * n + j];
                            }
                        }
                    }
                });
            }
            Op::AddBias(a, bias) => {
                let n = self.nodes[bias.0].value.shape[0];
                add_into(grads, &self.nodes, *a, &mut |s| {
                    for (si, gi) in s.iter_mut().zip(g) {
                        *si += gi;
                    }
                });
                add_into(grads, &self.nodes, *bias, &mut |s| {
                    for (idx, gi) in g.iter().enumerate() {
                        s[idx % n] += gi;
                    }
                });
            }
            Op::Relu(a) => {
                let da = &self.nodes[a.0].value.data;
                add_into(grads, &self.nodes, *a, &mut |s| {
                    for ((si, gi), &x) in s.iter_mut().zip(g).zip(da) {
                        if x > 0.0 {
                            *si += gi;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let out = &self.nodes[i].value.data;
                add_into(grads, &self.nodes, *a, &mut |s| {
                    for ((si, gi), &y) in s.iter_mut().zip(g).zip(out) {
                        *si += gi * y * (1.0 - y);
                    }
                });
            }
            Op::Exp(a) => {
                let out = &self.nodes[i].value.data;
                add_into(grads, &self.nodes, *a, &mut |s| {
                    for ((si, gi), &y) in s.iter_mut().zip(g).zip(out) {
                        *si += gi * y;
                    }
                });
            }
            Op::Ln(a) => {
                let da = &self.nodes[a.0].value.data;
                add_into(grads, &self.nodes, *a, &mut |s| {
                    for ((si, gi), &x) in s.iter_mut().zip(g).zip(da) {
                        *si += gi / x;
                    }
                });
            }
            Op::Sqrt(a) => {
                let out = &self.nodes[i].value.data;
                add_into(grads, &self.nodes, *a, &mut |s| {
                    for ((si, gi), &y) in s.iter_mut().zip(g).zip(out) {
                        if y != 0.0 {
                            *si += gi / (2.0 * y);
                        }
                    }
                });
            }
            Op::Square(a) => {
                let da = &self.nodes[a.0].value.data;
                add_into(grads, &self.nodes, *a, &mut |s| {
                    for ((si, gi), &x) in s.iter_mut().zip(g).zip(da) {
                        *si += gi * 2.0 * x;
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let da = &self.nodes[a.0].value.data;
                let (lo, hi) = (*lo, *hi);
                add_into(grads, &self.nodes, *a, &mut |s| {
                    for ((si, gi), &x) in s.iter_mut().zip(g).zip(da) {
                        if x > lo && x < hi {
                            *si += gi;
                        }
                    }
                });
            }
            Op::Scale(a, c) => {
                let c = *c;
                add_into(grads, &self.nodes, *a, &mut |s| {
                    for (si, gi) in s.iter_mut().zip(g) {
                        *si += c * gi;
                    }
                });
            }
            Op::Sum(a) => {
                let g0 = g[0];
                add_into(grads, &self.nodes, *a, &mut |s| {
                    for si in s.iter_mut() {
                        *si += g0;
                    }
                });
            }
            Op::Mean(a) => {
                let len = self.nodes[a.0].value.data.len() as f64;
                let g0 = g[0] / len;
                add_into(grads, &self.nodes, *a, &mut |s| {
                    for si in s.iter_mut() {
                        *si += g0;
                    }
                });
            }
            Op::Concat(a, b) => {
                let na = self.nodes[a.0].value.data.len();
                add_into(grads, &self.nodes, *a, &mut |s| {
                    for (si, gi) in s.iter_mut().zip(&g[..na]) {
                        *si += gi;
                    }
                });
                add_into(grads, &self.nodes, *b, &mut |s| {
                    for (si, gi) in s.iter_mut().zip(&g[na..]) {
                        *si += gi;
                    }
                });
            }
            Op::IndexSelect(a, indices) => {
                let cols = self.nodes[a.0].value.cols();
                add_into(grads, &self.nodes, *a, &mut |s| {
                    for (out_row, &src_row) in indices.iter().enumerate() {
                        for c in 0..cols {
                            s[src_row * cols + c] += g[out_row * cols + c];
                        }
                    }
                });
            }
            Op::TakePerRow(a, cols_idx) => {
                let n = self.nodes[a.0].value.shape[1];
                add_into(grads, &self.nodes, *a, &mut |s| {
                    for (row, &c) in cols_idx.iter().enumerate() {
                        s[row * n + c] += g[row];
                    }
                });
            }
            Op::PairwiseSqDist(a, b) => {
                let ta = &self.nodes[a.0].value;
                let tb = &self.nodes[b.0].value;
                let (m, k, d) = (ta.shape[0], tb.shape[0], ta.shape[1]);
                add_into(grads, &self.nodes, *a, &mut |s| {
                    for i2 in 0..m {
                        for j in 0..k {
                            let gij = g[i2 * k + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for c in 0..d {
                                s[i2 * d + c] +=
                                    gij * 2.0 * (ta.data[i2 * d + c] - tb.data[j * d + c]);
                            }
                        }
                    }
                });
                add_into(grads, &self.nodes, *b, &mut |s| {
                    for i2 in 0..m {
                        for j in 0..k {
                            let gij = g[i2 * k + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for c in 0..d {
                                s[j * d + c] -=
                                    gij * 2.0 * (ta.data[i2 * d + c] - tb.data[j * d + c]);
                            }
                        }
                    }
                });
            }
        }
    }
}

/// Named, persistent weight array. Lives outside any graph; feed it
/// into one with [`Graph::input`] each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::ShapeMismatch {
                op: "parameter",
                detail: format!("shape {shape:?} needs {len} values, got {}", data.len()),
            });
        }
        Ok(Self { name: name.into(), shape, data })
    }

    pub fn tensor(&self) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.clone() }
    }
}

/// Insert every parameter into a graph with gradients enabled.
pub fn bind_params(graph: &mut Graph, params: &[Parameter]) -> Vec<Var> {
    params.iter().map(|p| graph.input(p.tensor(), true)).collect()
}

/// Pull the gradients for bound parameters after `backward`; missing
/// gradients are an error (backward not run, or var not tracked).
pub fn collect_grads(graph: &Graph, vars: &[Var], params: &[Parameter]) -> Result<Vec<Vec<f64>>> {
    vars.iter()
        .zip(params)
        .map(|(&v, p)| {
            graph
                .grad(v)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| Error::MissingGradient { name: p.name.clone() })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Adam with bias correction. Moment buffers are allocated on the
/// first step and keyed by position, so the parameter list must stay
/// stable across steps.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, step_count: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update over parallel slices of parameters and gradients.
    pub fn step(&mut self, params: &mut [Parameter], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::InvalidArgument(format!(
                "adam got {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
            self.v = self.m.clone();
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.cfg.beta1.powi(t);
        let c2 = 1.0 - self.cfg.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.data.len() != g.len() {
                return Err(Error::MissingGradient { name: p.name.clone() });
            }
            for i in 0..g.len() {
                m[i] = self.cfg.beta1 * m[i] + (1.0 - self.cfg.beta1) * g[i];
                v[i] = self.cfg.beta2 * v[i] + (1.0 - self.cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p.data[i] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}

/// Compare analytic gradients of a scalar-valued builder against
/// central finite differences, coordinate by coordinate.
///
/// Returns the maximum relative error `|analytic − fd| / max(1, |fd|)`
/// over all parameter coordinates.
pub fn finite_diff_check<F>(params: &[Parameter], h: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Parameter]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.input(p.tensor(), false)).collect();
        let out = build(&mut g, &vars)?;
        if !g.value(out).is_scalar() {
            return Err(Error::NonScalarRoot { shape: g.value(out).shape().to_vec() });
        }
        Ok(g.value(out).data()[0])
    };

    let mut g = Graph::new();
    let vars = bind_params(&mut g, params);
    let out = build(&mut g, &vars)?;
    g.backward(out)?;
    let analytic = collect_grads(&g, &vars, params)?;

    let mut worst: f64 = 0.0;
    let mut probe = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for ci in 0..p.data.len() {
            probe[pi].data[ci] = p.data[ci] + h;
            let up = eval(&probe)?;
            probe[pi].data[ci] = p.data[ci] - h;
            let down = eval(&probe)?;
            probe[pi].data[ci] = p.data[ci];
            let fd = (up - down) / (2.0 * h);
            let rel = (analytic[pi][ci] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
