use std::cell::RefCell;
use std::fmt;

use super::tensor::{gemm, gemm_a_bt_acc, gemm_at_b_acc, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Unary {
    Relu,
    Tanh,
    Exp,
    Log,
    Neg,
    Abs,
    Square,
    Sqrt,
    MaxScalar(f64),
    AddScalar(f64),
    MulScalar(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(usize, usize),
    AddRow(usize, usize),
    Unary(Unary, usize),
    Binary(Binary, usize, usize),
    Sum(usize),
    Mean(usize),
    SumAxis { x: usize, axis: usize },
    MeanAxis { x: usize, axis: usize },
    L2Norm(usize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    PickRows { x: usize, cols: Vec<usize> },
    SelectRows { x: usize, rows: Vec<usize> },
    PairDistances { a: usize, b: usize, pairs: Vec<(usize, usize)> },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Records operations in execution order so gradients can be propagated
/// backward. Nodes are only ever appended, so parents always precede
/// children.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

/// A tensor recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by the node a `Var` refers to.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` when no gradient
    /// flowed into it (constants, detached values, unreachable leaves).
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable leaf (a parameter or an input we want gradients for).
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push_unchecked(value, true, Op::Leaf)
    }

    /// Leaf that never receives gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_unchecked(value, false, Op::Constant)
    }

    fn push_unchecked(&self, value: Tensor, requires_grad: bool, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, name: &'static str, value: Tensor, parents: &[usize], op: Op) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].requires_grad)
        };
        Ok(self.push_unchecked(value, requires_grad, op))
    }

    fn value_of(&self, id: usize) -> std::cell::Ref<'_, Tensor> {
        std::cell::Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Propagates gradients from a scalar `loss` to every node that requires
    /// them. The tape itself is left untouched, so repeated calls yield
    /// identical results.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        if !root.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.id] = Some(Tensor::ones(root.value.shape()));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            propagate(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }
        // Only differentiable nodes report gradients.
        for (g, node) in grads.iter_mut().zip(nodes.iter()) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], id: usize, contribution: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => {
            for (e, c) in existing.data_mut().iter_mut().zip(contribution.data()) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}

fn shaped(like: &Tensor, data: Vec<f64>) -> Tensor {
    Tensor::new(like.shape().to_vec(), data).expect("gradient shape mirrors value shape")
}

/// Reduces a broadcast gradient back to a one-element operand.
fn unbroadcast(operand: &Tensor, grad: Vec<f64>) -> Tensor {
    if operand.numel() == grad.len() {
        shaped(operand, grad)
    } else {
        shaped(operand, vec![grad.iter().sum()])
    }
}

fn propagate(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let y = &node.value;
    let gd = g.data();
    match &node.op {
        Op::Leaf | Op::Constant => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            if nodes[*a].requires_grad {
                let mut da = vec![0.0; m * k];
                gemm_a_bt_acc(gd, bv.data(), &mut da, m, k, n);
                accumulate(nodes, grads, *a, shaped(av, da));
            }
            if nodes[*b].requires_grad {
                let mut db = vec![0.0; k * n];
                gemm_at_b_acc(av.data(), gd, &mut db, m, k, n);
                accumulate(nodes, grads, *b, shaped(bv, db));
            }
        }
        Op::AddRow(x, b) => {
            accumulate(nodes, grads, *x, g.clone());
            if nodes[*b].requires_grad {
                let cols = nodes[*b].value.numel();
                let mut db = vec![0.0; cols];
                for row in gd.chunks(cols) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                accumulate(nodes, grads, *b, shaped(&nodes[*b].value, db));
            }
        }
        Op::Unary(kind, x) => {
            let xv = &nodes[*x].value;
            let xd = xv.data();
            let yd = y.data();
            let dx: Vec<f64> = (0..xd.len())
                .map(|i| {
                    let (xi, yi, gi) = (xd[i], yd[i], gd[i]);
                    match kind {
                        Unary::Relu => {
                            if xi > 0.0 {
                                gi
                            } else {
                                0.0
                            }
                        }
                        Unary::Tanh => gi * (1.0 - yi * yi),
                        Unary::Exp => gi * yi,
                        Unary::Log => gi / xi,
                        Unary::Neg => -gi,
                        // subgradient of |x| at 0 is taken as 0
                        Unary::Abs => {
                            if xi > 0.0 {
                                gi
                            } else if xi < 0.0 {
                                -gi
                            } else {
                                0.0
                            }
                        }
                        Unary::Square => 2.0 * xi * gi,
                        Unary::Sqrt => {
                            if yi > 0.0 {
                                gi / (2.0 * yi)
                            } else {
                                0.0
                            }
                        }
                        Unary::MaxScalar(c) => {
                            if xi > *c {
                                gi
                            } else {
                                0.0
                            }
                        }
                        Unary::AddScalar(_) => gi,
                        Unary::MulScalar(c) => gi * c,
                    }
                })
                .collect();
            accumulate(nodes, grads, *x, shaped(xv, dx));
        }
        Op::Binary(kind, a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let n = gd.len();
            let at = |i: usize| if av.numel() == 1 { av.data()[0] } else { av.data()[i] };
            let bt = |i: usize| if bv.numel() == 1 { bv.data()[0] } else { bv.data()[i] };
            if nodes[*a].requires_grad {
                let da: Vec<f64> = (0..n)
                    .map(|i| match kind {
                        Binary::Add | Binary::Sub => gd[i],
                        Binary::Mul => gd[i] * bt(i),
                        Binary::Div => gd[i] / bt(i),
                    })
                    .collect();
                accumulate(nodes, grads, *a, unbroadcast(av, da));
            }
            if nodes[*b].requires_grad {
                let db: Vec<f64> = (0..n)
                    .map(|i| match kind {
                        Binary::Add => gd[i],
                        Binary::Sub => -gd[i],
                        Binary::Mul => gd[i] * at(i),
                        Binary::Div => -gd[i] * at(i) / (bt(i) * bt(i)),
                    })
                    .collect();
                accumulate(nodes, grads, *b, unbroadcast(bv, db));
            }
        }
        Op::Sum(x) | Op::Mean(x) => {
            let xv = &nodes[*x].value;
            let scale = if matches!(node.op, Op::Mean(_)) {
                1.0 / xv.numel() as f64
            } else {
                1.0
            };
            accumulate(nodes, grads, *x, shaped(xv, vec![gd[0] * scale; xv.numel()]));
        }
        Op::SumAxis { x, axis } | Op::MeanAxis { x, axis } => {
            let xv = &nodes[*x].value;
            let (outer, len, inner) = axis_split(xv.shape(), *axis);
            let scale = if matches!(node.op, Op::MeanAxis { .. }) {
                1.0 / len as f64
            } else {
                1.0
            };
            let mut dx = vec![0.0; xv.numel()];
            for o in 0..outer {
                for l in 0..len {
                    for i in 0..inner {
                        dx[(o * len + l) * inner + i] = gd[o * inner + i] * scale;
                    }
                }
            }
            accumulate(nodes, grads, *x, shaped(xv, dx));
        }
        Op::L2Norm(x) => {
            let xv = &nodes[*x].value;
            let norm = y.data()[0];
            let dx = if norm > 0.0 {
                xv.data().iter().map(|v| gd[0] * v / norm).collect()
            } else {
                vec![0.0; xv.numel()]
            };
            accumulate(nodes, grads, *x, shaped(xv, dx));
        }
        Op::SoftmaxRows(x) => {
            let cols = y.cols();
            let mut dx = vec![0.0; y.numel()];
            for ((yr, gr), dr) in y
                .data()
                .chunks(cols)
                .zip(gd.chunks(cols))
                .zip(dx.chunks_mut(cols))
            {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for k in 0..cols {
                    dr[k] = yr[k] * (gr[k] - dot);
                }
            }
            accumulate(nodes, grads, *x, shaped(y, dx));
        }
        Op::LogSoftmaxRows(x) => {
            let cols = y.cols();
            let mut dx = vec![0.0; y.numel()];
            for ((yr, gr), dr) in y
                .data()
                .chunks(cols)
                .zip(gd.chunks(cols))
                .zip(dx.chunks_mut(cols))
            {
                let total: f64 = gr.iter().sum();
                for k in 0..cols {
                    dr[k] = gr[k] - yr[k].exp() * total;
                }
            }
            accumulate(nodes, grads, *x, shaped(y, dx));
        }
        Op::PickRows { x, cols } => {
            let xv = &nodes[*x].value;
            let c = xv.cols();
            let mut dx = vec![0.0; xv.numel()];
            for (i, &k) in cols.iter().enumerate() {
                dx[i * c + k] += gd[i];
            }
            accumulate(nodes, grads, *x, shaped(xv, dx));
        }
        Op::SelectRows { x, rows } => {
            let xv = &nodes[*x].value;
            let c = xv.cols();
            let mut dx = vec![0.0; xv.numel()];
            for (i, &r) in rows.iter().enumerate() {
                for j in 0..c {
                    dx[r * c + j] += gd[i * c + j];
                }
            }
            accumulate(nodes, grads, *x, shaped(xv, dx));
        }
        Op::PairDistances { a, b, pairs } => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let c = av.cols();
            let mut da = vec![0.0; av.numel()];
            let mut db = vec![0.0; bv.numel()];
            for (p, &(i, j)) in pairs.iter().enumerate() {
                let dist = y.data()[p];
                // the norm is not differentiable at 0; use the zero subgradient
                if dist == 0.0 {
                    continue;
                }
                let scale = gd[p] / dist;
                for k in 0..c {
                    let diff = av.data()[i * c + k] - bv.data()[j * c + k];
                    da[i * c + k] += scale * diff;
                    db[j * c + k] -= scale * diff;
                }
            }
            accumulate(nodes, grads, *a, shaped(av, da));
            accumulate(nodes, grads, *b, shaped(bv, db));
        }
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn scalar_broadcast(a: &Tensor, b: &Tensor) -> Option<Vec<usize>> {
    if a.shape() == b.shape() || b.numel() == 1 {
        Some(a.shape().to_vec())
    } else if a.numel() == 1 {
        Some(b.shape().to_vec())
    } else {
        None
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value_of(self.id).shape().to_vec()
    }

    /// Copy of the current value.
    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.id).clone()
    }

    /// The single value of a one-element var.
    pub fn item(&self) -> Result<f64> {
        self.tape.value_of(self.id).item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Same values, cut off from gradient flow.
    pub fn detach(&self) -> Var<'t> {
        if !self.requires_grad() {
            return *self;
        }
        self.tape.constant(self.value())
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars from different tapes cannot be combined"
        );
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other);
        let out = {
            let a = self.tape.value_of(self.id);
            let b = self.tape.value_of(other.id);
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut data = vec![0.0; m * n];
            gemm(a.data(), b.data(), &mut data, m, k, n);
            Tensor::new(vec![m, n], data)?
        };
        self.tape
            .push("matmul", out, &[self.id, other.id], Op::MatMul(self.id, other.id))
    }

    /// Adds a length-`n` vector to every row of an `m x n` matrix.
    pub fn add_row(&self, bias: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(bias);
        let out = {
            let x = self.tape.value_of(self.id);
            let b = self.tape.value_of(bias.id);
            if x.rank() != 2 || b.numel() != x.cols() {
                return Err(Error::ShapeMismatch {
                    op: "add_row",
                    lhs: x.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let mut data = x.data().to_vec();
            for row in data.chunks_mut(b.numel()) {
                for (v, bv) in row.iter_mut().zip(b.data()) {
                    *v += bv;
                }
            }
            Tensor::new(x.shape().to_vec(), data)?
        };
        self.tape
            .push("add_row", out, &[self.id, bias.id], Op::AddRow(self.id, bias.id))
    }

    fn unary(&self, name: &'static str, kind: Unary, f: impl Fn(f64) -> f64) -> Result<Var<'t>> {
        let out = self.tape.value_of(self.id).map(f);
        self.tape.push(name, out, &[self.id], Op::Unary(kind, self.id))
    }

    pub fn relu(&self) -> Result<Var<'t>> {
        self.unary("relu", Unary::Relu, |v| v.max(0.0))
    }

    pub fn tanh(&self) -> Result<Var<'t>> {
        self.unary("tanh", Unary::Tanh, f64::tanh)
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        self.unary("exp", Unary::Exp, f64::exp)
    }

    pub fn log(&self) -> Result<Var<'t>> {
        if let Some(bad) = self.tape.value_of(self.id).data().iter().find(|v| **v <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        self.unary("log", Unary::Log, f64::ln)
    }

    pub fn neg(&self) -> Result<Var<'t>> {
        self.unary("neg", Unary::Neg, |v| -v)
    }

    pub fn abs(&self) -> Result<Var<'t>> {
        self.unary("abs", Unary::Abs, f64::abs)
    }

    pub fn square(&self) -> Result<Var<'t>> {
        self.unary("square", Unary::Square, |v| v * v)
    }

    pub fn sqrt(&self) -> Result<Var<'t>> {
        if let Some(bad) = self.tape.value_of(self.id).data().iter().find(|v| **v < 0.0) {
            return Err(Error::Domain {
                op: "sqrt",
                detail: format!("negative input {bad}"),
            });
        }
        self.unary("sqrt", Unary::Sqrt, f64::sqrt)
    }

    /// Elementwise `max(x, c)`.
    pub fn max_scalar(&self, c: f64) -> Result<Var<'t>> {
        self.unary("max_with_scalar", Unary::MaxScalar(c), move |v| v.max(c))
    }

    pub fn add_scalar(&self, c: f64) -> Result<Var<'t>> {
        self.unary("add_scalar", Unary::AddScalar(c), move |v| v + c)
    }

    pub fn mul_scalar(&self, c: f64) -> Result<Var<'t>> {
        self.unary("mul_scalar", Unary::MulScalar(c), move |v| v * c)
    }

    fn binary(&self, other: &Var<'t>, name: &'static str, kind: Binary) -> Result<Var<'t>> {
        self.same_tape(other);
        let out = {
            let a = self.tape.value_of(self.id);
            let b = self.tape.value_of(other.id);
            let shape = scalar_broadcast(&a, &b).ok_or_else(|| Error::ShapeMismatch {
                op: name,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            })?;
            let n: usize = shape.iter().product();
            let at = |i: usize| if a.numel() == 1 { a.data()[0] } else { a.data()[i] };
            let bt = |i: usize| if b.numel() == 1 { b.data()[0] } else { b.data()[i] };
            let data = (0..n)
                .map(|i| match kind {
                    Binary::Add => at(i) + bt(i),
                    Binary::Sub => at(i) - bt(i),
                    Binary::Mul => at(i) * bt(i),
                    Binary::Div => at(i) / bt(i),
                })
                .collect();
            Tensor::new(shape, data)?
        };
        self.tape
            .push(name, out, &[self.id, other.id], Op::Binary(kind, self.id, other.id))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Binary::Add)
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Binary::Sub)
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Binary::Mul)
    }

    pub fn div(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div", Binary::Div)
    }

    fn nonempty(&self) -> Result<()> {
        if self.tape.value_of(self.id).numel() == 0 {
            return Err(Error::EmptyReduction);
        }
        Ok(())
    }

    pub fn sum(&self) -> Result<Var<'t>> {
        self.nonempty()?;
        let s = self.tape.value_of(self.id).data().iter().sum();
        self.tape.push("sum", Tensor::scalar(s), &[self.id], Op::Sum(self.id))
    }

    pub fn mean(&self) -> Result<Var<'t>> {
        self.nonempty()?;
        let m = {
            let v = self.tape.value_of(self.id);
            v.data().iter().sum::<f64>() / v.numel() as f64
        };
        self.tape.push("mean", Tensor::scalar(m), &[self.id], Op::Mean(self.id))
    }

    fn reduce_axis(&self, axis: usize, mean: bool) -> Result<Var<'t>> {
        self.nonempty()?;
        let out = {
            let x = self.tape.value_of(self.id);
            if axis >= x.rank() {
                return Err(Error::AxisOutOfRange {
                    axis,
                    rank: x.rank(),
                });
            }
            let (outer, len, inner) = axis_split(x.shape(), axis);
            let scale = if mean { 1.0 / len as f64 } else { 1.0 };
            let mut data = vec![0.0; outer * inner];
            for o in 0..outer {
                for l in 0..len {
                    for i in 0..inner {
                        data[o * inner + i] += x.data()[(o * len + l) * inner + i];
                    }
                }
            }
            data.iter_mut().for_each(|v| *v *= scale);
            let mut shape = x.shape().to_vec();
            shape.remove(axis);
            if shape.is_empty() {
                shape.push(1);
            }
            Tensor::new(shape, data)?
        };
        let op = if mean {
            Op::MeanAxis { x: self.id, axis }
        } else {
            Op::SumAxis { x: self.id, axis }
        };
        self.tape
            .push(if mean { "mean_axis" } else { "sum_axis" }, out, &[self.id], op)
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t>> {
        self.reduce_axis(axis, false)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Var<'t>> {
        self.reduce_axis(axis, true)
    }

    /// Euclidean norm over all elements.
    pub fn l2_norm(&self) -> Result<Var<'t>> {
        self.nonempty()?;
        let n = self
            .tape
            .value_of(self.id)
            .data()
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        self.tape
            .push("l2_norm", Tensor::scalar(n), &[self.id], Op::L2Norm(self.id))
    }

    fn require_matrix(&self, op: &'static str) -> Result<()> {
        let x = self.tape.value_of(self.id);
        if x.rank() != 2 || x.numel() == 0 {
            return Err(Error::InvalidShape {
                shape: x.shape().to_vec(),
                reason: format!("{op} expects a non-empty matrix"),
            });
        }
        Ok(())
    }

    /// Row-wise softmax, shifted by the row maximum.
    pub fn softmax_rows(&self) -> Result<Var<'t>> {
        self.require_matrix("softmax_rows")?;
        let out = {
            let x = self.tape.value_of(self.id);
            let mut data = x.data().to_vec();
            for row in data.chunks_mut(x.cols()) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    total += *v;
                }
                row.iter_mut().for_each(|v| *v /= total);
            }
            Tensor::new(x.shape().to_vec(), data)?
        };
        self.tape
            .push("softmax_rows", out, &[self.id], Op::SoftmaxRows(self.id))
    }

    /// Row-wise log-softmax (log-sum-exp with max shift).
    pub fn log_softmax_rows(&self) -> Result<Var<'t>> {
        self.require_matrix("log_softmax_rows")?;
        let out = {
            let x = self.tape.value_of(self.id);
            let mut data = x.data().to_vec();
            for row in data.chunks_mut(x.cols()) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                row.iter_mut().for_each(|v| *v -= lse);
            }
            Tensor::new(x.shape().to_vec(), data)?
        };
        self.tape
            .push("log_softmax_rows", out, &[self.id], Op::LogSoftmaxRows(self.id))
    }

    /// Picks entry `cols[i]` from row `i` of a matrix, giving a vector.
    pub fn pick_rows(&self, cols: &[usize]) -> Result<Var<'t>> {
        self.require_matrix("pick_rows")?;
        let out = {
            let x = self.tape.value_of(self.id);
            if cols.len() != x.rows() {
                return Err(Error::ShapeMismatch {
                    op: "pick_rows",
                    lhs: x.shape().to_vec(),
                    rhs: vec![cols.len()],
                });
            }
            let c = x.cols();
            let mut data = Vec::with_capacity(cols.len());
            for (i, &k) in cols.iter().enumerate() {
                if k >= c {
                    return Err(Error::LabelOutOfRange {
                        label: k,
                        num_classes: c,
                    });
                }
                data.push(x.data()[i * c + k]);
            }
            Tensor::vector(data)
        };
        self.tape.push(
            "pick_rows",
            out,
            &[self.id],
            Op::PickRows {
                x: self.id,
                cols: cols.to_vec(),
            },
        )
    }

    /// Gathers rows of a matrix (a single row index yields a `1 x d` matrix).
    pub fn select_rows(&self, rows: &[usize]) -> Result<Var<'t>> {
        let out = self.tape.value_of(self.id).select_rows(rows)?;
        self.tape.push(
            "select_rows",
            out,
            &[self.id],
            Op::SelectRows {
                x: self.id,
                rows: rows.to_vec(),
            },
        )
    }

    /// Euclidean distances `||a[i] - b[j]||` for each listed row pair.
    pub fn pair_distances(&self, other: &Var<'t>, pairs: &[(usize, usize)]) -> Result<Var<'t>> {
        self.same_tape(other);
        let out = {
            let a = self.tape.value_of(self.id);
            let b = self.tape.value_of(other.id);
            if a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols() {
                return Err(Error::ShapeMismatch {
                    op: "pair_distances",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let mut data = Vec::with_capacity(pairs.len());
            for &(i, j) in pairs {
                if i >= a.rows() || j >= b.rows() {
                    return Err(Error::invalid(format!("pair ({i}, {j}) out of range")));
                }
                let d2: f64 = a
                    .row(i)
                    .iter()
                    .zip(b.row(j))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                data.push(d2.sqrt());
            }
            Tensor::vector(data)
        };
        self.tape.push(
            "pair_distances",
            out,
            &[self.id, other.id],
            Op::PairDistances {
                a: self.id,
                b: other.id,
                pairs: pairs.to_vec(),
            },
        )
    }
}
