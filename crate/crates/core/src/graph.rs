//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only list of nodes. Every operation pushes one node
//! whose inputs are earlier nodes, so insertion order is a topological order and
//! [`Graph::backward`] simply walks the list in reverse. Graphs are rebuilt for
//! every forward pass; a recurrent unroll is just a longer graph.
//!
//! Binary elementwise operations broadcast over matrix views: each operand is
//! seen as `rows × cols` (scalars are 1×1, vectors 1×n) and a dimension of size
//! one stretches to match the other operand.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{dims2, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Relu,
    /// Exponential linear unit with α = 1.
    Elu,
    Abs,
    Square,
    Sigmoid,
    Tanh,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(BinaryOp, Var, Var),
    Unary(UnaryOp, Var),
    ScalarMul(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    /// `source[k]` is the flat input index that produced output `k`.
    MaxAxis {
        input: Var,
        source: Vec<usize>,
    },
    GatherRows {
        input: Var,
        index: Vec<usize>,
    },
    Pick {
        input: Var,
        cols: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols {
        input: Var,
        start: usize,
    },
    Reshape(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
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

    /// Adds a leaf. Its `requires_grad` flag decides whether it receives a gradient.
    pub fn tensor(&mut self, t: Tensor) -> Var {
        let needs_grad = t.requires_grad();
        self.push(t, Op::Leaf, needs_grad)
    }

    /// Adds a leaf that never receives a gradient.
    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        Ok(self.tensor(Tensor::new(shape, data)?))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// Clears accumulated gradients on every leaf.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        debug_assert!(value.data().iter().all(|x| x.is_finite()), "{op:?}");
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node_tensor(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let value = Tensor::new(&shape, data).expect("operation produced consistent shape");
        self.push(value, op, needs_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.data(a), self.data(b), m, k, n);
        Ok(self.node_tensor(vec![m, n], out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ((ra, ca), (rb, cb)) = (dims2(sa), dims2(sb));
        let rows = broadcast_dim(ra, rb).ok_or_else(|| shape_err("elementwise", sa, sb))?;
        let cols = broadcast_dim(ca, cb).ok_or_else(|| shape_err("elementwise", sa, sb))?;
        let shape = if (rows, cols) == (ra, ca) {
            sa.to_vec()
        } else if (rows, cols) == (rb, cb) {
            sb.to_vec()
        } else {
            vec![rows, cols]
        };
        let (da, db) = (self.data(a), self.data(b));
        let f = match op {
            BinaryOp::Add => |x: f64, y: f64| x + y,
            BinaryOp::Sub => |x: f64, y: f64| x - y,
            BinaryOp::Mul => |x: f64, y: f64| x * y,
        };
        let out = if (ra, ca) == (rb, cb) {
            da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let mut out = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                let (ia, ib) = (if ra == 1 { 0 } else { i }, if rb == 1 { 0 } else { i });
                for j in 0..cols {
                    let x = da[ia * ca + if ca == 1 { 0 } else { j }];
                    let y = db[ib * cb + if cb == 1 { 0 } else { j }];
                    out.push(f(x, y));
                }
            }
            out
        };
        Ok(self.node_tensor(shape, out, Op::Binary(op, a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn unary(&mut self, op: UnaryOp, x: Var) -> Var {
        let f: fn(f64) -> f64 = match op {
            UnaryOp::Neg => |v| -v,
            UnaryOp::Relu => |v| if v > 0.0 { v } else { 0.0 },
            UnaryOp::Elu => |v| if v > 0.0 { v } else { libm::expm1(v) },
            UnaryOp::Abs => libm::fabs,
            UnaryOp::Square => |v| v * v,
            UnaryOp::Sigmoid => sigmoid,
            UnaryOp::Tanh => libm::tanh,
        };
        let out = self.data(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.node_tensor(shape, out, Op::Unary(op, x), &[x])
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Neg, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Relu, x)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Elu, x)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Abs, x)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Square, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Tanh, x)
    }

    pub fn scalar_mul(&mut self, x: Var, c: f64) -> Var {
        let out = self.data(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.node_tensor(shape, out, Op::ScalarMul(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.data(x).iter().map(|&v| v + c).collect();
        let shape = self.shape(x).to_vec();
        self.node_tensor(shape, out, Op::AddScalar(x), &[x])
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        self.node_tensor(Vec::new(), vec![s], Op::Sum(x), &[x])
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let m = d.iter().sum::<f64>() / d.len() as f64;
        self.node_tensor(Vec::new(), vec![m], Op::Mean(x), &[x])
    }

    /// Sums a matrix along `axis`, keeping that axis with size one.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x);
        if shape.len() != 2 || axis > 1 {
            return Err(Error::Axis {
                axis,
                shape: shape.to_vec(),
            });
        }
        let (r, c) = (shape[0], shape[1]);
        let d = self.data(x);
        let (out_shape, out) = if axis == 1 {
            (
                vec![r, 1],
                (0..r).map(|i| d[i * c..(i + 1) * c].iter().sum()).collect(),
            )
        } else {
            (
                vec![1, c],
                (0..c).map(|j| (0..r).map(|i| d[i * c + j]).sum()).collect(),
            )
        };
        Ok(self.node_tensor(out_shape, out, Op::SumAxis(x, axis), &[x]))
    }

    /// Maximum along `axis`. Rank-2 inputs keep the reduced axis with size one;
    /// a vector reduces to shape `[1]`. The gradient flows to one maximizing
    /// entry, the first on ties.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (r, c, out_shape) = match (shape.len(), axis) {
            (1, 0) => (1, shape[0], vec![1]),
            (2, 1) => (shape[0], shape[1], vec![shape[0], 1]),
            (2, 0) => (shape[0], shape[1], vec![1, shape[1]]),
            _ => return Err(Error::Axis { axis, shape }),
        };
        let d = self.data(x);
        let mut out = Vec::new();
        let mut source = Vec::new();
        if axis == 1 || shape.len() == 1 {
            for i in 0..r {
                let row = &d[i * c..(i + 1) * c];
                let j = crate::tensor::argmax(row).expect("non-empty row");
                out.push(row[j]);
                source.push(i * c + j);
            }
        } else {
            for j in 0..c {
                let mut best = 0;
                for i in 1..r {
                    if d[i * c + j] > d[best * c + j] {
                        best = i;
                    }
                }
                out.push(d[best * c + j]);
                source.push(best * c + j);
            }
        }
        Ok(self.node_tensor(out_shape, out, Op::MaxAxis { input: x, source }, &[x]))
    }

    /// Selects rows of a matrix by index (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(shape_err("gather_rows", &shape, &[index.len()]));
        }
        let (r, c) = (shape[0], shape[1]);
        let d = self.data(x);
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index {
            if i >= r {
                return Err(shape_err("gather_rows", &shape, &[i]));
            }
            out.extend_from_slice(&d[i * c..(i + 1) * c]);
        }
        Ok(self.node_tensor(
            vec![index.len(), c],
            out,
            Op::GatherRows {
                input: x,
                index: index.to_vec(),
            },
            &[x],
        ))
    }

    /// Picks column `cols[i]` from row `i`, giving an `m × 1` matrix.
    pub fn pick(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || shape[0] != cols.len() {
            return Err(shape_err("pick", &shape, &[cols.len()]));
        }
        let c = shape[1];
        let d = self.data(x);
        let mut out = Vec::with_capacity(cols.len());
        for (i, &j) in cols.iter().enumerate() {
            if j >= c {
                return Err(shape_err("pick", &shape, &[i, j]));
            }
            out.push(d[i * c + j]);
        }
        Ok(self.node_tensor(
            vec![cols.len(), 1],
            out,
            Op::Pick {
                input: x,
                cols: cols.to_vec(),
            },
            &[x],
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| shape_err("concat_cols", &[], &[]))?;
        let rows = self.shape(first)[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return Err(shape_err("concat_cols", self.shape(first), s));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[i * w..(i + 1) * w]);
            }
        }
        Ok(self.node_tensor(
            vec![rows, total],
            out,
            Op::ConcatCols(parts.to_vec()),
            parts,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| shape_err("concat_rows", &[], &[]))?;
        let cols = self.shape(first).get(1).copied().unwrap_or(0);
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[1] != cols {
                return Err(shape_err("concat_rows", self.shape(first), s));
            }
            rows += s[0];
        }
        let mut out = Vec::with_capacity(rows * cols);
        for &p in parts {
            out.extend_from_slice(self.data(p));
        }
        Ok(self.node_tensor(vec![rows, cols], out, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || start + len > shape[1] || len == 0 {
            return Err(shape_err("slice_cols", &shape, &[start, len]));
        }
        let (r, c) = (shape[0], shape[1]);
        let d = self.data(x);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&d[i * c + start..i * c + start + len]);
        }
        Ok(self.node_tensor(vec![r, len], out, Op::SliceCols { input: x, start }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() {
            return Err(shape_err("reshape", self.shape(x), shape));
        }
        let data = self.data(x).to_vec();
        Ok(self.node_tensor(shape.to_vec(), data, Op::Reshape(x), &[x]))
    }

    /// Reverse pass from a one-element `loss`.
    ///
    /// Gradients are added into the `grad` buffer of every leaf that requires
    /// one; leaves the loss does not depend on get a zero buffer. Calling this
    /// twice without [`Graph::zero_grad`] accumulates.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if matches!(self.nodes[idx].op, Op::Leaf) {
                self.nodes[idx].value.accumulate_grad(&g);
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }
        for node in &mut self.nodes {
            if node.needs_grad && matches!(node.op, Op::Leaf) && node.value.grad().is_none() {
                let zeros = vec![0.0; node.value.numel()];
                node.value.accumulate_grad(&zeros);
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let (da, db) = (self.data(*a), self.data(*b));
                if self.nodes[a.0].needs_grad {
                    // dA = dC · Bᵀ
                    let ga = slot(grads, *a, m * k);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &db[p * n..(p + 1) * n];
                            ga[i * k + p] += dot(grow, brow);
                        }
                    }
                }
                if self.nodes[b.0].needs_grad {
                    // dB = Aᵀ · dC
                    let gb = slot(grads, *b, k * n);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = da[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            let dst = &mut gb[p * n..(p + 1) * n];
                            for (d, &x) in dst.iter_mut().zip(grow) {
                                *d += aip * x;
                            }
                        }
                    }
                }
            }
            Op::Binary(op, a, b) => {
                let (ra, ca) = dims2(self.shape(*a));
                let (rb, cb) = dims2(self.shape(*b));
                let (rows, cols) = (ra.max(rb), ca.max(cb));
                let (da, db) = (self.data(*a), self.data(*b));
                let need_a = self.nodes[a.0].needs_grad;
                let need_b = self.nodes[b.0].needs_grad;
                if need_a {
                    let ga = slot(grads, *a, ra * ca);
                    for i in 0..rows {
                        for j in 0..cols {
                            let ia =
                                (if ra == 1 { 0 } else { i }) * ca + if ca == 1 { 0 } else { j };
                            let ib =
                                (if rb == 1 { 0 } else { i }) * cb + if cb == 1 { 0 } else { j };
                            let up = g[i * cols + j];
                            ga[ia] += match op {
                                BinaryOp::Add | BinaryOp::Sub => up,
                                BinaryOp::Mul => up * db[ib],
                            };
                        }
                    }
                }
                if need_b {
                    let gb = slot(grads, *b, rb * cb);
                    for i in 0..rows {
                        for j in 0..cols {
                            let ia =
                                (if ra == 1 { 0 } else { i }) * ca + if ca == 1 { 0 } else { j };
                            let ib =
                                (if rb == 1 { 0 } else { i }) * cb + if cb == 1 { 0 } else { j };
                            let up = g[i * cols + j];
                            gb[ib] += match op {
                                BinaryOp::Add => up,
                                BinaryOp::Sub => -up,
                                BinaryOp::Mul => up * da[ia],
                            };
                        }
                    }
                }
            }
            Op::Unary(op, x) => {
                let dx = self.data(*x);
                let gx = slot(grads, *x, dx.len());
                for k in 0..dx.len() {
                    let local = match op {
                        UnaryOp::Neg => -1.0,
                        UnaryOp::Relu => {
                            if dx[k] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        UnaryOp::Elu => {
                            if dx[k] > 0.0 {
                                1.0
                            } else {
                                out[k] + 1.0
                            }
                        }
                        UnaryOp::Abs => {
                            if dx[k] > 0.0 {
                                1.0
                            } else if dx[k] < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        }
                        UnaryOp::Square => 2.0 * dx[k],
                        UnaryOp::Sigmoid => out[k] * (1.0 - out[k]),
                        UnaryOp::Tanh => 1.0 - out[k] * out[k],
                    };
                    gx[k] += g[k] * local;
                }
            }
            Op::ScalarMul(x, c) => {
                let gx = slot(grads, *x, g.len());
                gx.iter_mut().zip(g).for_each(|(d, &u)| *d += u * c);
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                let gx = slot(grads, *x, g.len());
                gx.iter_mut().zip(g).for_each(|(d, &u)| *d += u);
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                slot(grads, *x, n).iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                let share = g[0] / n as f64;
                slot(grads, *x, n).iter_mut().for_each(|d| *d += share);
            }
            Op::SumAxis(x, axis) => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                let gx = slot(grads, *x, r * c);
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] += if *axis == 1 { g[i] } else { g[j] };
                    }
                }
            }
            Op::MaxAxis { input, source } => {
                let n = self.value(*input).numel();
                let gx = slot(grads, *input, n);
                for (k, &s) in source.iter().enumerate() {
                    gx[s] += g[k];
                }
            }
            Op::GatherRows { input, index } => {
                let n = self.value(*input).numel();
                let c = self.shape(*input)[1];
                let gx = slot(grads, *input, n);
                for (k, &i) in index.iter().enumerate() {
                    let dst = &mut gx[i * c..(i + 1) * c];
                    dst.iter_mut()
                        .zip(&g[k * c..(k + 1) * c])
                        .for_each(|(d, &u)| *d += u);
                }
            }
            Op::Pick { input, cols } => {
                let n = self.value(*input).numel();
                let c = self.shape(*input)[1];
                let gx = slot(grads, *input, n);
                for (i, &j) in cols.iter().enumerate() {
                    gx[i * c + j] += g[i];
                }
            }
            Op::ConcatCols(parts) => {
                let rows = node.value.shape()[0];
                let total = node.value.shape()[1];
                let mut offset = 0;
                for p in parts {
                    let w = self.shape(*p)[1];
                    if self.nodes[p.0].needs_grad {
                        let gp = slot(grads, *p, rows * w);
                        for i in 0..rows {
                            let src = &g[i * total + offset..i * total + offset + w];
                            gp[i * w..(i + 1) * w]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, &u)| *d += u);
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).numel();
                    if self.nodes[p.0].needs_grad {
                        let gp = slot(grads, *p, n);
                        gp.iter_mut()
                            .zip(&g[offset..offset + n])
                            .for_each(|(d, &u)| *d += u);
                    }
                    offset += n;
                }
            }
            Op::SliceCols { input, start } => {
                let (r, c) = (self.shape(*input)[0], self.shape(*input)[1]);
                let len = node.value.shape()[1];
                let gx = slot(grads, *input, r * c);
                for i in 0..r {
                    gx[i * c + start..i * c + start + len]
                        .iter_mut()
                        .zip(&g[i * len..(i + 1) * len])
                        .for_each(|(d, &u)| *d += u);
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    match (a, b) {
        _ if a == b => Some(a),
        (1, _) => Some(b),
        (_, 1) => Some(a),
        _ => None,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &x) in orow.iter_mut().zip(brow) {
                *o += aip * x;
            }
        }
    }
    out
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + libm::exp(-v))
    } else {
        let e = libm::exp(v);
        e / (1.0 + e)
    }
}
