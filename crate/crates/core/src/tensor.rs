//! Minimal reverse-mode automatic differentiation over dense 2-D tensors.
//!
//! A [`Tape`] records every primitive application in creation order, which is
//! already a topological order: inputs always exist before the node that
//! consumes them. [`Tape::backward`] walks the record once in reverse.
//!
//! All tensors are row-major `rows x cols` matrices of `f64`. Scalars are
//! `1 x 1`, vectors are `1 x n`. The only broadcast is a `1 x cols` right-hand
//! operand against a `rows x cols` left-hand operand in `add`, `sub` and `mul`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.rows, self.cols)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs} and {rhs}")]
    ShapeMismatch { op: &'static str, lhs: Shape, rhs: Shape },
    #[error("tensor data has {len} values but shape {shape} needs {}", shape.len())]
    DataLength { shape: Shape, len: usize },
    #[error("{op}: index {index} out of range for {bound}")]
    IndexOutOfRange { op: &'static str, index: usize, bound: usize },
    #[error("backward needs a scalar loss, got shape {0}")]
    NonScalarLoss(Shape),
    #[error("{op}: empty input")]
    Empty { op: &'static str },
}

/// Dense row-major matrix value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        if data.len() != rows * cols {
            return Err(TensorError::DataLength { shape: Shape::new(rows, cols), len: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::full(rows, cols, 0.0)
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(1, 1, value)
    }

    pub fn row_vector(values: Vec<f64>) -> Self {
        Self { rows: 1, cols: values.len(), data: values }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(TensorError::DataLength {
                    shape: Shape::new(rows.len(), cols),
                    len: r.len() * rows.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Value of a `1 x 1` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Reduce over rows, producing `1 x cols`.
    Rows,
    /// Reduce over columns, producing `rows x 1`.
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Powf(Var, f64),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var, Axis),
    Mean(Var, Axis),
    Concat(Vec<Var>),
    RowGather(Var, Arc<[usize]>),
    SegmentSum(Var, Arc<[usize]>),
    Reshape(Var),
    NormalizeRows(Var, f64),
    ScaleRows(Var, Arc<[f64]>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    is_param: bool,
}

/// Ordered record of primitive applications.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: requires_grad, is_param: requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad, is_param: false });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols != y.rows {
            return Err(TensorError::ShapeMismatch { op: "matmul", lhs: x.shape(), rhs: y.shape() });
        }
        let out = matmul_raw(x, y);
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    fn check_broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<bool, TensorError> {
        let (x, y) = (self.shape(a), self.shape(b));
        if x == y {
            Ok(false)
        } else if y.rows == 1 && y.cols == x.cols {
            Ok(true)
        } else {
            Err(TensorError::ShapeMismatch { op, lhs: x, rhs: y })
        }
    }

    fn binary(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        self.check_broadcast(op_name, a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let cols = x.cols;
        let data = if x.shape() == y.shape() {
            x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect()
        } else {
            x.data.iter().enumerate().map(|(i, &p)| f(p, y.data[i % cols])).collect()
        };
        let out = Tensor { rows: x.rows, cols, data };
        Ok(self.push(out, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, |p, q| p - q, Op::Sub(a, b))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, |p, q| p * q, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| c * v);
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a), &[a])
    }

    /// Elementwise `x^p`.
    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let out = self.value(a).map(|v| v.powf(p));
        self.push(out, Op::Powf(a, p), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a), &[a])
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        self.push(out, Op::Softmax(a), &[a])
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..x.rows {
            let row = &mut out.data[r * x.cols..(r + 1) * x.cols];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.push(out, Op::LogSoftmax(a), &[a])
    }

    pub fn sum(&mut self, a: Var, axis: Axis) -> Var {
        let out = reduce(self.value(a), axis, 1.0);
        self.push(out, Op::Sum(a, axis), &[a])
    }

    pub fn mean(&mut self, a: Var, axis: Axis) -> Result<Var, TensorError> {
        let x = self.value(a);
        let n = match axis {
            Axis::Rows => x.rows,
            Axis::Cols => x.cols,
        };
        if n == 0 {
            return Err(TensorError::Empty { op: "mean" });
        }
        let out = reduce(x, axis, 1.0 / n as f64);
        Ok(self.push(out, Op::Mean(a, axis), &[a]))
    }

    /// Sum of every element, as a `1 x 1` tensor.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.sum(a, Axis::Rows);
        self.sum(s, Axis::Cols)
    }

    /// Concatenation along the column axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::Empty { op: "concat" })?;
        let rows = self.shape(first).rows;
        for &p in &parts[1..] {
            if self.shape(p).rows != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: self.shape(first),
                    rhs: self.shape(p),
                });
            }
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor { rows, cols, data };
        Ok(self.push(out, Op::Concat(parts.to_vec()), parts))
    }

    /// Output row `k` is input row `indices[k]`.
    pub fn row_gather(&mut self, a: Var, indices: Arc<[usize]>) -> Result<Var, TensorError> {
        let x = self.value(a);
        let mut data = Vec::with_capacity(indices.len() * x.cols);
        for &i in indices.iter() {
            if i >= x.rows {
                return Err(TensorError::IndexOutOfRange { op: "row_gather", index: i, bound: x.rows });
            }
            data.extend_from_slice(x.row(i));
        }
        let out = Tensor { rows: indices.len(), cols: x.cols, data };
        Ok(self.push(out, Op::RowGather(a, indices), &[a]))
    }

    /// Output row `s` is the sum of input rows `k` with `segment_ids[k] == s`.
    pub fn segment_sum(
        &mut self,
        a: Var,
        segment_ids: Arc<[usize]>,
        num_segments: usize,
    ) -> Result<Var, TensorError> {
        let x = self.value(a);
        if segment_ids.len() != x.rows {
            return Err(TensorError::ShapeMismatch {
                op: "segment_sum",
                lhs: x.shape(),
                rhs: Shape::new(segment_ids.len(), 1),
            });
        }
        let mut out = Tensor::zeros(num_segments, x.cols);
        for (k, &s) in segment_ids.iter().enumerate() {
            if s >= num_segments {
                return Err(TensorError::IndexOutOfRange { op: "segment_sum", index: s, bound: num_segments });
            }
            let src = x.row(k);
            let dst = &mut out.data[s * x.cols..(s + 1) * x.cols];
            dst.iter_mut().zip(src).for_each(|(d, v)| *d += v);
        }
        Ok(self.push(out, Op::SegmentSum(a, segment_ids), &[a]))
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, TensorError> {
        let x = self.value(a);
        if x.data.len() != rows * cols {
            return Err(TensorError::ShapeMismatch { op: "reshape", lhs: x.shape(), rhs: Shape::new(rows, cols) });
        }
        let out = Tensor { rows, cols, data: x.data.clone() };
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    /// Multiplies row `r` by the constant `weights[r]`.
    pub fn scale_rows(&mut self, a: Var, weights: Arc<[f64]>) -> Result<Var, TensorError> {
        let x = self.value(a);
        if weights.len() != x.rows {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                lhs: x.shape(),
                rhs: Shape::new(weights.len(), 1),
            });
        }
        let mut out = x.clone();
        for (r, &w) in weights.iter().enumerate() {
            out.data[r * x.cols..(r + 1) * x.cols].iter_mut().for_each(|v| *v *= w);
        }
        Ok(self.push(out, Op::ScaleRows(a, weights), &[a]))
    }

    /// Divides each row by `max(||row||, eps)`.
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..x.rows {
            let row = &mut out.data[r * x.cols..(r + 1) * x.cols];
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(eps);
            row.iter_mut().for_each(|v| *v /= n);
        }
        self.push(out, Op::NormalizeRows(a, eps), &[a])
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Every parameter leaf gets an entry; parameters not on the path from
    /// `loss` get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let shape = self.shape(loss);
        if shape != Shape::new(1, 1) {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let mut out = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if node.is_param {
                let g = grads.get_mut(i).and_then(Option::take);
                out[i] = Some(g.unwrap_or_else(|| Tensor::zeros(node.value.rows, node.value.cols)));
            }
        }
        Ok(Gradients { grads: out })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (x, w) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    accumulate(grads, *a, matmul_nt(g, w));
                }
                if self.needs(*b) {
                    accumulate(grads, *b, matmul_tn(x, g));
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    let gb = unbroadcast(g, self.shape(*b)).map(|v| sign * v);
                    accumulate(grads, *b, gb);
                }
            }
            Op::Mul(a, b) => {
                let (x, w) = (self.value(*a), self.value(*b));
                let cols = x.cols;
                if self.needs(*a) {
                    let broadcast = w.shape() != x.shape();
                    let data = g
                        .data
                        .iter()
                        .enumerate()
                        .map(|(i, &gv)| gv * w.data[if broadcast { i % cols } else { i }])
                        .collect();
                    accumulate(grads, *a, Tensor { rows: x.rows, cols, data });
                }
                if self.needs(*b) {
                    let full = Tensor {
                        rows: x.rows,
                        cols,
                        data: g.data.iter().zip(&x.data).map(|(p, q)| p * q).collect(),
                    };
                    accumulate(grads, *b, unbroadcast(&full, w.shape()));
                }
            }
            Op::Scale(a, c) => accumulate(grads, *a, g.map(|v| c * v)),
            Op::Relu(a) => {
                let x = self.value(*a);
                let data = g.data.iter().zip(&x.data).map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 });
                accumulate(grads, *a, Tensor { rows: x.rows, cols: x.cols, data: data.collect() });
            }
            Op::Sigmoid(a) => {
                let data = g.data.iter().zip(&y.data).map(|(&gv, &s)| gv * s * (1.0 - s));
                accumulate(grads, *a, Tensor { rows: y.rows, cols: y.cols, data: data.collect() });
            }
            Op::Tanh(a) => {
                let data = g.data.iter().zip(&y.data).map(|(&gv, &t)| gv * (1.0 - t * t));
                accumulate(grads, *a, Tensor { rows: y.rows, cols: y.cols, data: data.collect() });
            }
            Op::Exp(a) => {
                let data = g.data.iter().zip(&y.data).map(|(&gv, &e)| gv * e);
                accumulate(grads, *a, Tensor { rows: y.rows, cols: y.cols, data: data.collect() });
            }
            Op::Powf(a, p) => {
                let x = self.value(*a);
                let data = g.data.iter().zip(&x.data).map(|(&gv, &xv)| gv * p * xv.powf(p - 1.0));
                accumulate(grads, *a, Tensor { rows: y.rows, cols: y.cols, data: data.collect() });
            }
            Op::Log(a) => {
                let x = self.value(*a);
                let data = g.data.iter().zip(&x.data).map(|(&gv, &xv)| gv / xv);
                accumulate(grads, *a, Tensor { rows: y.rows, cols: y.cols, data: data.collect() });
            }
            Op::Softmax(a) => {
                let mut out = Tensor::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let (gr, yr) = (g.row(r), y.row(r));
                    let dot: f64 = gr.iter().zip(yr).map(|(p, q)| p * q).sum();
                    for c in 0..y.cols {
                        out.data[r * y.cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                accumulate(grads, *a, out);
            }
            Op::LogSoftmax(a) => {
                let mut out = Tensor::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let (gr, yr) = (g.row(r), y.row(r));
                    let total: f64 = gr.iter().sum();
                    for c in 0..y.cols {
                        out.data[r * y.cols + c] = gr[c] - yr[c].exp() * total;
                    }
                }
                accumulate(grads, *a, out);
            }
            Op::Sum(a, axis) | Op::Mean(a, axis) => {
                let x = self.shape(*a);
                let factor = match (&node.op, axis) {
                    (Op::Mean(..), Axis::Rows) => 1.0 / x.rows as f64,
                    (Op::Mean(..), Axis::Cols) => 1.0 / x.cols as f64,
                    _ => 1.0,
                };
                let mut out = Tensor::zeros(x.rows, x.cols);
                for r in 0..x.rows {
                    for c in 0..x.cols {
                        let gv = match axis {
                            Axis::Rows => g.data[c],
                            Axis::Cols => g.data[r],
                        };
                        out.data[r * x.cols + c] = factor * gv;
                    }
                }
                accumulate(grads, *a, out);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let s = self.shape(p);
                    if self.needs(p) {
                        let mut out = Tensor::zeros(s.rows, s.cols);
                        for r in 0..s.rows {
                            out.data[r * s.cols..(r + 1) * s.cols]
                                .copy_from_slice(&g.row(r)[offset..offset + s.cols]);
                        }
                        accumulate(grads, p, out);
                    }
                    offset += s.cols;
                }
            }
            Op::RowGather(a, indices) => {
                let s = self.shape(*a);
                let mut out = Tensor::zeros(s.rows, s.cols);
                for (k, &i) in indices.iter().enumerate() {
                    let dst = &mut out.data[i * s.cols..(i + 1) * s.cols];
                    dst.iter_mut().zip(g.row(k)).for_each(|(d, v)| *d += v);
                }
                accumulate(grads, *a, out);
            }
            Op::SegmentSum(a, ids) => {
                let s = self.shape(*a);
                let mut data = Vec::with_capacity(s.len());
                for &seg in ids.iter() {
                    data.extend_from_slice(g.row(seg));
                }
                accumulate(grads, *a, Tensor { rows: s.rows, cols: s.cols, data });
            }
            Op::Reshape(a) => {
                let s = self.shape(*a);
                accumulate(grads, *a, Tensor { rows: s.rows, cols: s.cols, data: g.data.clone() });
            }
            Op::ScaleRows(a, weights) => {
                let mut out = g.clone();
                for (r, &w) in weights.iter().enumerate() {
                    out.data[r * g.cols..(r + 1) * g.cols].iter_mut().for_each(|v| *v *= w);
                }
                accumulate(grads, *a, out);
            }
            Op::NormalizeRows(a, eps) => {
                let x = self.value(*a);
                let mut out = Tensor::zeros(x.rows, x.cols);
                for r in 0..x.rows {
                    let (xr, yr, gr) = (x.row(r), y.row(r), g.row(r));
                    let n = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let dst = &mut out.data[r * x.cols..(r + 1) * x.cols];
                    if n > *eps {
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for c in 0..x.cols {
                            dst[c] = (gr[c] - yr[c] * dot) / n;
                        }
                    } else {
                        for c in 0..x.cols {
                            dst[c] = gr[c] / eps;
                        }
                    }
                }
                accumulate(grads, *a, out);
            }
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.data.iter_mut().zip(&g.data).for_each(|(e, d)| *e += d),
        slot @ None => *slot = Some(g),
    }
}

fn unbroadcast(g: &Tensor, target: Shape) -> Tensor {
    if g.shape() == target {
        return g.clone();
    }
    reduce(g, Axis::Rows, 1.0)
}

fn reduce(x: &Tensor, axis: Axis, factor: f64) -> Tensor {
    match axis {
        Axis::Rows => {
            let mut out = Tensor::zeros(1, x.cols);
            for r in 0..x.rows {
                out.data.iter_mut().zip(x.row(r)).for_each(|(o, v)| *o += v);
            }
            out.data.iter_mut().for_each(|v| *v *= factor);
            out
        }
        Axis::Cols => {
            let data = (0..x.rows).map(|r| factor * x.row(r).iter().sum::<f64>()).collect();
            Tensor { rows: x.rows, cols: 1, data }
        }
    }
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..x.rows {
        let row = &mut out.data[r * x.cols..(r + 1) * x.cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}

fn matmul_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * m..(p + 1) * m];
            orow.iter_mut().zip(brow).for_each(|(o, bv)| *o += av * bv);
        }
    }
    Tensor { rows: n, cols: m, data: out }
}

/// `a * b^T`
fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, m) = (a.rows, b.rows);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let ar = a.row(i);
        for j in 0..m {
            out[i * m + j] = ar.iter().zip(b.row(j)).map(|(p, q)| p * q).sum();
        }
    }
    Tensor { rows: n, cols: m, data: out }
}

/// `a^T * b`
fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, n, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; n * m];
    for p in 0..k {
        let (ar, br) = (a.row(p), b.row(p));
        for i in 0..n {
            let av = ar[i];
            if av == 0.0 {
                continue;
            }
            out[i * m..(i + 1) * m].iter_mut().zip(br).for_each(|(o, bv)| *o += av * bv);
        }
    }
    Tensor { rows: n, cols: m, data: out }
}

/// Gradients of a scalar loss with respect to every parameter leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

/// Finite-difference step used by [`gradcheck`].
pub const GRADCHECK_STEP: f64 = 1e-3;

/// Compares reverse-mode gradients against central finite differences.
///
/// `f` builds a scalar from parameter leaves created for each of `inputs`.
/// Returns the maximum over all input entries of
/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn gradcheck<E, F>(f: F, inputs: &[Tensor]) -> Result<f64, E>
where
    E: From<TensorError>,
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
{
    let eval = |values: &[Tensor]| -> Result<f64, E> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let s = tape.shape(out);
        if s != Shape::new(1, 1) {
            return Err(TensorError::NonScalarLoss(s).into());
        }
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (t, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("parameter gradient");
        for i in 0..inputs[t].data.len() {
            let orig = inputs[t].data[i];
            probe[t].data[i] = orig + GRADCHECK_STEP;
            let plus = eval(&probe)?;
            probe[t].data[i] = orig - GRADCHECK_STEP;
            let minus = eval(&probe)?;
            probe[t].data[i] = orig;
            let numeric = (plus - minus) / (2.0 * GRADCHECK_STEP);
            let a = analytic.data[i];
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::new(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(1, 3));
        let y = tape.softmax(x);
        for &v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn segment_sum_example() {
        let mut tape = Tape::new();
        let x = tape.constant(t(3, 1, &[1.0, 2.0, 3.0]));
        let y = tape.segment_sum(x, Arc::from(vec![0, 0, 1]), 2).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 3.0]);
    }

    #[test]
    fn sigmoid_derivative_at_zero() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(0.0));
        let y = tape.sigmoid(x);
        let g = tape.backward(y).unwrap();
        assert!((g.get(x).unwrap().item() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::row_vector(vec![1.0, 2.0]));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn disconnected_param_gets_zero_grad() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::row_vector(vec![1.0, 2.0]));
        let z = tape.param(Tensor::row_vector(vec![5.0, 6.0, 7.0]));
        let loss = tape.sum_all(x);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(z).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::row_vector(vec![1.0, 2.0]));
        assert_eq!(tape.backward(x).unwrap_err(), TensorError::NonScalarLoss(Shape::new(1, 2)));
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        let err = tape.matmul(a, b).unwrap_err();
        assert_eq!(err.to_string(), "matmul: shape mismatch between [2, 3] and [2, 3]");
        let c = tape.constant(Tensor::zeros(2, 2));
        assert!(matches!(tape.add(a, c), Err(TensorError::ShapeMismatch { op: "add", .. })));
        let bad: Arc<[usize]> = Arc::from(vec![0, 5]);
        assert!(tape.row_gather(a, bad.clone()).is_err());
        assert!(tape.segment_sum(c, bad, 2).is_err());
    }

    #[test]
    fn row_broadcast_add() {
        let mut tape = Tape::new();
        let a = tape.param(t(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.param(t(1, 2, &[10.0, 20.0]));
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[11.0, 22.0, 13.0, 24.0]);
        let loss = tape.sum_all(c);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn matmul_mean_gradcheck() {
        let x = t(2, 3, &[0.3, -1.2, 0.5, 2.0, 0.1, -0.7]);
        let w = t(3, 2, &[0.2, -0.4, 1.1, 0.6, -0.9, 0.05]);
        let err = gradcheck::<TensorError, _>(
            |tape, v| {
                let y = tape.matmul(v[0], v[1])?;
                let m = tape.mean(y, Axis::Rows)?;
                tape.mean(m, Axis::Cols)
            },
            &[x, w],
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn identity_gradcheck_is_exact() {
        let err = gradcheck::<TensorError, _>(|tape, v| Ok(tape.sum_all(v[0])), &[t(1, 3, &[1.0, -2.0, 0.5])])
            .unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn softmax_cross_entropy_gradcheck() {
        let logits = t(2, 3, &[0.2, -1.0, 0.7, 1.5, 0.3, -0.2]);
        let onehot = t(2, 3, &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let err = gradcheck::<TensorError, _>(
            |tape, v| {
                let ls = tape.log_softmax(v[0]);
                let y = tape.constant(onehot.clone());
                let picked = tape.mul(ls, y)?;
                let s = tape.sum_all(picked);
                Ok(tape.scale(s, -0.5))
            },
            &[logits],
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
