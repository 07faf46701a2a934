//! Recorded computation and reverse-mode differentiation.
//!
//! A [`Tape`] owns every intermediate value produced while a loss is being
//! built. [`Var`] is a cheap handle into that record. Nodes are appended in
//! evaluation order, so the reverse pass is a single sweep over indices.
//!
//! A tape is single-use: after [`Tape::backward`] the record is cleared and
//! every further operation on it fails with [`NumError::RecordConsumed`].

use std::cell::{Cell, RefCell};
use std::collections::{BTreeMap, HashMap};

use crate::error::{NumError, Result};
use crate::params::ParameterSet;
use crate::tensor::{Axis, Shape, Tensor};

const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    ScaleRows(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Neg(usize),
    Transpose(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    Softmax(usize, Axis),
    SegmentSoftmax { input: usize, segments: Vec<usize> },
    LeakyRelu(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Sin(usize),
    Cos(usize),
    Sum(usize),
    Mean(usize),
    SumAxis(usize, Axis),
    MaxAxis { input: usize, axis: Axis, argmax: Vec<usize> },
    GatherRows { input: usize, index: Vec<usize> },
    ScatterAddRows { input: usize, index: Vec<usize> },
    NormalizeRows(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<String>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    param_leaves: RefCell<HashMap<String, usize>>,
    consumed: Cell<bool>,
}

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{}, {})", self.id, self.shape())
    }
}

/// Gradients produced by one reverse pass.
#[derive(Debug, Default)]
pub struct Gradients {
    by_node: HashMap<usize, Tensor>,
    by_param: BTreeMap<String, Tensor>,
}

impl Gradients {
    /// Gradient with respect to a leaf created by [`Tape::variable`].
    pub fn wrt(&self, var: Var<'_>) -> Option<&Tensor> {
        self.by_node.get(&var.id)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.by_param.get(name)
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.by_param.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Moves parameter gradients into `params`, adding to any gradient
    /// already stored there.
    pub fn apply_to(self, params: &mut ParameterSet) -> Result<()> {
        for (name, g) in self.by_param {
            params.accumulate_grad(&name, g)?;
        }
        Ok(())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_live(&self) -> Result<()> {
        if self.consumed.get() {
            Err(NumError::RecordConsumed)
        } else {
            Ok(())
        }
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var<'_>> {
        self.check_live()?;
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    /// A leaf that never receives gradient.
    pub fn constant(&self, value: Tensor) -> Result<Var<'_>> {
        self.push(value, Op::Leaf, false)
    }

    /// An unnamed leaf that receives gradient; read it back with
    /// [`Gradients::wrt`].
    pub fn variable(&self, value: Tensor) -> Result<Var<'_>> {
        self.push(value, Op::Leaf, true)
    }

    /// Places a named parameter on the record. Repeated calls with the same
    /// name return the same leaf. Frozen parameters enter as constants.
    pub fn param(&self, params: &ParameterSet, name: &str) -> Result<Var<'_>> {
        self.check_live()?;
        if let Some(&id) = self.param_leaves.borrow().get(name) {
            return Ok(Var { tape: self, id });
        }
        let p = params
            .get(name)
            .ok_or_else(|| NumError::UnknownParameter(name.to_string()))?;
        let var = self.push(p.value.clone(), Op::Leaf, p.trainable)?;
        if p.trainable {
            self.nodes.borrow_mut()[var.id].param = Some(name.to_string());
        }
        self.param_leaves
            .borrow_mut()
            .insert(name.to_string(), var.id);
        Ok(var)
    }

    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts.first().ok_or(NumError::EmptyInput { op: "concat_cols" })?;
        let rows = first.shape().rows;
        let mut ids = Vec::with_capacity(parts.len());
        let mut cols = 0;
        for p in parts {
            self.own(*p)?;
            let s = p.shape();
            if s.rows != rows {
                return Err(NumError::ShapeMismatch {
                    op: "concat_cols",
                    left: first.shape(),
                    right: s,
                });
            }
            cols += s.cols;
            ids.push(p.id);
        }
        let nodes = self.nodes.borrow();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &id in &ids {
                let src = nodes[id].value.row_slice(r);
                out.row_slice_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let rg = ids.iter().any(|&i| nodes[i].requires_grad);
        drop(nodes);
        self.push(out, Op::ConcatCols(ids), rg)
    }

    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts.first().ok_or(NumError::EmptyInput { op: "concat_rows" })?;
        let cols = first.shape().cols;
        let mut ids = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        let nodes = self.nodes.borrow();
        for p in parts {
            if !std::ptr::eq(p.tape, self) {
                return Err(NumError::ForeignVariable);
            }
            let v = &nodes[p.id].value;
            if v.cols() != cols {
                return Err(NumError::ShapeMismatch {
                    op: "concat_rows",
                    left: first.shape(),
                    right: v.shape(),
                });
            }
            data.extend_from_slice(v.data());
            ids.push(p.id);
        }
        let rows = data.len() / cols.max(1);
        let rg = ids.iter().any(|&i| nodes[i].requires_grad);
        drop(nodes);
        self.push(Tensor::from_vec(rows, cols, data)?, Op::ConcatRows(ids), rg)
    }

    fn own(&self, v: Var<'_>) -> Result<()> {
        if std::ptr::eq(v.tape, self) {
            Ok(())
        } else {
            Err(NumError::ForeignVariable)
        }
    }

    /// Reverse pass from a scalar `loss`. Clears the record afterwards.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        self.check_live()?;
        self.own(loss)?;
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.shape() != Shape::scalar() {
            return Err(NumError::NonScalarLoss(root.value.shape()));
        }
        if !root.requires_grad {
            return Err(NumError::DetachedLoss);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::scalar(1.0));

        let mut out = Gradients::default();
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                if let Some(name) = &node.param {
                    out.by_param.insert(name.clone(), g.clone());
                }
                out.by_node.insert(id, g);
                continue;
            }
            propagate(&nodes, node, &g, &mut grads);
        }
        drop(nodes);
        self.nodes.borrow_mut().clear();
        self.param_leaves.borrow_mut().clear();
        self.consumed.set(true);
        Ok(out)
    }

    /// [`Tape::backward`] followed by [`Gradients::apply_to`].
    pub fn backward_into(&self, loss: Var<'_>, params: &mut ParameterSet) -> Result<()> {
        self.backward(loss)?.apply_to(params)
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn propagate(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let val = |id: usize| &nodes[id].value;
    let y = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            if nodes[*a].requires_grad {
                let ga = g.matmul(&val(*b).transpose()).expect("matmul grad shape");
                accumulate(nodes, grads, *a, ga);
            }
            if nodes[*b].requires_grad {
                let gb = val(*a).transpose().matmul(g).expect("matmul grad shape");
                accumulate(nodes, grads, *b, gb);
            }
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.map(|x| -x));
        }
        Op::Mul(a, b) => {
            accumulate(nodes, grads, *a, g.zip_map(val(*b), |x, y| x * y));
            accumulate(nodes, grads, *b, g.zip_map(val(*a), |x, y| x * y));
        }
        Op::AddRow(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, column_sums(g));
        }
        Op::ScaleRows(a, w) => {
            let (av, wv) = (val(*a), val(*w));
            let cols = g.cols();
            let mut ga = g.clone();
            let mut gw = Tensor::zeros(g.rows(), 1);
            for r in 0..g.rows() {
                let wr = wv.get(r, 0);
                let mut acc = 0.0;
                for c in 0..cols {
                    acc += g.get(r, c) * av.get(r, c);
                    ga.set(r, c, g.get(r, c) * wr);
                }
                gw.set(r, 0, acc);
            }
            accumulate(nodes, grads, *a, ga);
            accumulate(nodes, grads, *w, gw);
        }
        Op::Scale(a, f) => accumulate(nodes, grads, *a, g.map(|x| x * f)),
        Op::AddScalar(a) => accumulate(nodes, grads, *a, g.clone()),
        Op::Neg(a) => accumulate(nodes, grads, *a, g.map(|x| -x)),
        Op::Transpose(a) => accumulate(nodes, grads, *a, g.transpose()),
        Op::ConcatCols(ids) => {
            let mut off = 0;
            for &id in ids {
                let w = val(id).cols();
                let mut part = Tensor::zeros(g.rows(), w);
                for r in 0..g.rows() {
                    part.row_slice_mut(r)
                        .copy_from_slice(&g.row_slice(r)[off..off + w]);
                }
                off += w;
                accumulate(nodes, grads, id, part);
            }
        }
        Op::ConcatRows(ids) => {
            let mut off = 0;
            let cols = g.cols();
            for &id in ids {
                let h = val(id).rows();
                let part =
                    Tensor::from_vec(h, cols, g.data()[off * cols..(off + h) * cols].to_vec())
                        .expect("concat_rows grad shape");
                off += h;
                accumulate(nodes, grads, id, part);
            }
        }
        Op::Softmax(a, axis) => {
            let mut gx = Tensor::zeros(y.rows(), y.cols());
            match axis {
                Axis::Cols => {
                    for r in 0..y.rows() {
                        let dot: f64 = (0..y.cols()).map(|c| g.get(r, c) * y.get(r, c)).sum();
                        for c in 0..y.cols() {
                            gx.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                }
                Axis::Rows => {
                    for c in 0..y.cols() {
                        let dot: f64 = (0..y.rows()).map(|r| g.get(r, c) * y.get(r, c)).sum();
                        for r in 0..y.rows() {
                            gx.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                }
            }
            accumulate(nodes, grads, *a, gx);
        }
        Op::SegmentSoftmax { input, segments } => {
            let n_seg = segments.iter().copied().max().map_or(0, |m| m + 1);
            let mut dots = vec![0.0; n_seg];
            for (i, &s) in segments.iter().enumerate() {
                dots[s] += g.data()[i] * y.data()[i];
            }
            let data = segments
                .iter()
                .enumerate()
                .map(|(i, &s)| y.data()[i] * (g.data()[i] - dots[s]))
                .collect();
            let gx = Tensor::from_vec(y.rows(), 1, data).expect("segment softmax grad");
            accumulate(nodes, grads, *input, gx);
        }
        Op::LeakyRelu(a, slope) => {
            let gx = g.zip_map(val(*a), |gi, x| if x > 0.0 { gi } else { gi * slope });
            accumulate(nodes, grads, *a, gx);
        }
        Op::Relu(a) => {
            let gx = g.zip_map(val(*a), |gi, x| if x > 0.0 { gi } else { 0.0 });
            accumulate(nodes, grads, *a, gx);
        }
        Op::Sigmoid(a) => accumulate(nodes, grads, *a, g.zip_map(y, |gi, s| gi * s * (1.0 - s))),
        Op::Tanh(a) => accumulate(nodes, grads, *a, g.zip_map(y, |gi, t| gi * (1.0 - t * t))),
        Op::Exp(a) => accumulate(nodes, grads, *a, g.zip_map(y, |gi, e| gi * e)),
        Op::Log(a) => accumulate(nodes, grads, *a, g.zip_map(val(*a), |gi, x| gi / x)),
        Op::Sqrt(a) => accumulate(nodes, grads, *a, g.zip_map(y, |gi, s| gi / (2.0 * s))),
        Op::Sin(a) => accumulate(nodes, grads, *a, g.zip_map(val(*a), |gi, x| gi * x.cos())),
        Op::Cos(a) => accumulate(nodes, grads, *a, g.zip_map(val(*a), |gi, x| -gi * x.sin())),
        Op::Sum(a) => {
            let s = val(*a).shape();
            accumulate(nodes, grads, *a, Tensor::filled(s.rows, s.cols, g.item()));
        }
        Op::Mean(a) => {
            let s = val(*a).shape();
            let v = g.item() / s.numel() as f64;
            accumulate(nodes, grads, *a, Tensor::filled(s.rows, s.cols, v));
        }
        Op::SumAxis(a, axis) => {
            let s = val(*a).shape();
            let mut gx = Tensor::zeros(s.rows, s.cols);
            for r in 0..s.rows {
                for c in 0..s.cols {
                    let v = match axis {
                        Axis::Rows => g.get(0, c),
                        Axis::Cols => g.get(r, 0),
                    };
                    gx.set(r, c, v);
                }
            }
            accumulate(nodes, grads, *a, gx);
        }
        Op::MaxAxis { input, axis, argmax } => {
            let s = val(*input).shape();
            let mut gx = Tensor::zeros(s.rows, s.cols);
            match axis {
                Axis::Rows => {
                    for (c, &r) in argmax.iter().enumerate() {
                        gx.set(r, c, g.get(0, c));
                    }
                }
                Axis::Cols => {
                    for (r, &c) in argmax.iter().enumerate() {
                        gx.set(r, c, g.get(r, 0));
                    }
                }
            }
            accumulate(nodes, grads, *input, gx);
        }
        Op::GatherRows { input, index } => {
            let s = val(*input).shape();
            let mut gx = Tensor::zeros(s.rows, s.cols);
            for (k, &r) in index.iter().enumerate() {
                for (dst, src) in gx.row_slice_mut(r).iter_mut().zip(g.row_slice(k)) {
                    *dst += src;
                }
            }
            accumulate(nodes, grads, *input, gx);
        }
        Op::ScatterAddRows { input, index } => {
            let s = val(*input).shape();
            let mut gx = Tensor::zeros(s.rows, s.cols);
            for (k, &r) in index.iter().enumerate() {
                gx.row_slice_mut(k).copy_from_slice(g.row_slice(r));
            }
            accumulate(nodes, grads, *input, gx);
        }
        Op::NormalizeRows(a) => {
            let x = val(*a);
            let mut gx = Tensor::zeros(x.rows(), x.cols());
            for r in 0..x.rows() {
                let norm = row_norm(x.row_slice(r));
                let yr = y.row_slice(r);
                let gr = g.row_slice(r);
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for (c, out) in gx.row_slice_mut(r).iter_mut().enumerate() {
                    *out = (gr[c] - yr[c] * dot) / norm;
                }
            }
            accumulate(nodes, grads, *a, gx);
        }
    }
}

fn column_sums(t: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, t.cols());
    for r in 0..t.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(t.row_slice(r)) {
            *o += v;
        }
    }
    out
}

fn row_norm(row: &[f64]) -> f64 {
    row.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_FLOOR)
}

// Fallible ops cannot implement the operator traits.
#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    pub fn value(self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(self) -> Shape {
        self.tape
            .nodes
            .borrow()
            .get(self.id)
            .map_or(Shape::new(0, 0), |n| n.value.shape())
    }

    /// Value of a `[1, 1]` variable.
    pub fn item(self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    pub fn requires_grad(self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn unary(self, op: Op, f: impl FnOnce(&Tensor) -> Tensor) -> Result<Var<'t>> {
        self.tape.check_live()?;
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (f(&n.value), n.requires_grad)
        };
        self.tape.push(value, op, rg)
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        check: impl FnOnce(Shape, Shape) -> bool,
        op: Op,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
    ) -> Result<Var<'t>> {
        self.tape.check_live()?;
        self.tape.own(other)?;
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            if !check(a.value.shape(), b.value.shape()) {
                return Err(NumError::ShapeMismatch {
                    op: name,
                    left: a.value.shape(),
                    right: b.value.shape(),
                });
            }
            (f(&a.value, &b.value)?, a.requires_grad || b.requires_grad)
        };
        self.tape.push(value, op, rg)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(
            other,
            "matmul",
            |a, b| a.cols == b.rows,
            Op::MatMul(self.id, other.id),
            |a, b| a.matmul(b),
        )
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(
            other,
            "add",
            |a, b| a == b,
            Op::Add(self.id, other.id),
            |a, b| Ok(a.zip_map(b, |x, y| x + y)),
        )
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(
            other,
            "sub",
            |a, b| a == b,
            Op::Sub(self.id, other.id),
            |a, b| Ok(a.zip_map(b, |x, y| x - y)),
        )
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(
            other,
            "hadamard",
            |a, b| a == b,
            Op::Mul(self.id, other.id),
            |a, b| Ok(a.zip_map(b, |x, y| x * y)),
        )
    }

    /// Adds a `[1, cols]` row to every row.
    pub fn add_row(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.binary(
            bias,
            "add_row",
            |a, b| b.rows == 1 && a.cols == b.cols,
            Op::AddRow(self.id, bias.id),
            |a, b| {
                let mut out = a.clone();
                for r in 0..out.rows() {
                    for (o, v) in out.row_slice_mut(r).iter_mut().zip(b.data()) {
                        *o += v;
                    }
                }
                Ok(out)
            },
        )
    }

    /// Multiplies row `i` by `weights[i, 0]`.
    pub fn scale_rows(self, weights: Var<'t>) -> Result<Var<'t>> {
        self.binary(
            weights,
            "scale_rows",
            |a, w| w.cols == 1 && a.rows == w.rows,
            Op::ScaleRows(self.id, weights.id),
            |a, w| {
                let mut out = a.clone();
                for r in 0..out.rows() {
                    let s = w.get(r, 0);
                    out.row_slice_mut(r).iter_mut().for_each(|x| *x *= s);
                }
                Ok(out)
            },
        )
    }

    pub fn scale(self, factor: f64) -> Result<Var<'t>> {
        self.unary(Op::Scale(self.id, factor), |x| x.map(|v| v * factor))
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'t>> {
        self.unary(Op::AddScalar(self.id), |x| x.map(|v| v + c))
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.unary(Op::Neg(self.id), |x| x.map(|v| -v))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        self.unary(Op::Transpose(self.id), Tensor::transpose)
    }

    /// Softmax normalizing along `axis` (`Axis::Cols`: each row sums to 1).
    pub fn softmax(self, axis: Axis) -> Result<Var<'t>> {
        self.unary(Op::Softmax(self.id, axis), |x| softmax(x, axis))
    }

    /// Softmax of a `[n, 1]` column within groups: entries sharing a
    /// segment id are normalized together.
    pub fn segment_softmax(self, segments: &[usize]) -> Result<Var<'t>> {
        let s = self.shape();
        if s.cols != 1 || s.rows != segments.len() {
            return Err(NumError::ShapeMismatch {
                op: "segment_softmax",
                left: s,
                right: Shape::new(segments.len(), 1),
            });
        }
        let segs = segments.to_vec();
        self.unary(
            Op::SegmentSoftmax {
                input: self.id,
                segments: segments.to_vec(),
            },
            move |x| segment_softmax(x, &segs),
        )
    }

    pub fn leaky_relu(self, slope: f64) -> Result<Var<'t>> {
        self.unary(Op::LeakyRelu(self.id, slope), |x| {
            x.map(|v| if v > 0.0 { v } else { v * slope })
        })
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.unary(Op::Relu(self.id), |x| x.map(|v| v.max(0.0)))
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary(Op::Sigmoid(self.id), |x| x.map(sigmoid))
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.unary(Op::Tanh(self.id), |x| x.map(f64::tanh))
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary(Op::Exp(self.id), |x| x.map(f64::exp))
    }

    pub fn log(self) -> Result<Var<'t>> {
        self.unary(Op::Log(self.id), |x| x.map(f64::ln))
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        self.unary(Op::Sqrt(self.id), |x| x.map(f64::sqrt))
    }

    pub fn sin(self) -> Result<Var<'t>> {
        self.unary(Op::Sin(self.id), |x| x.map(f64::sin))
    }

    pub fn cos(self) -> Result<Var<'t>> {
        self.unary(Op::Cos(self.id), |x| x.map(f64::cos))
    }

    pub fn sum(self) -> Result<Var<'t>> {
        self.unary(Op::Sum(self.id), |x| Tensor::scalar(x.sum()))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        self.unary(Op::Mean(self.id), |x| {
            Tensor::scalar(x.sum() / x.shape().numel() as f64)
        })
    }

    pub fn sum_axis(self, axis: Axis) -> Result<Var<'t>> {
        self.unary(Op::SumAxis(self.id, axis), |x| match axis {
            Axis::Rows => column_sums(x),
            Axis::Cols => {
                let data = (0..x.rows()).map(|r| x.row_slice(r).iter().sum()).collect();
                Tensor::from_vec(x.rows(), 1, data).expect("row sums")
            }
        })
    }

    /// Maximum along `axis`. Ties route gradient to the first maximal index.
    pub fn max_axis(self, axis: Axis) -> Result<Var<'t>> {
        let s = self.shape();
        if s.numel() == 0 {
            return Err(NumError::EmptyInput { op: "max_axis" });
        }
        let (value, argmax) = {
            let nodes = self.tape.nodes.borrow();
            max_along(&nodes[self.id].value, axis)
        };
        self.unary(
            Op::MaxAxis {
                input: self.id,
                axis,
                argmax,
            },
            move |_| value,
        )
    }

    pub fn gather_rows(self, index: &[usize]) -> Result<Var<'t>> {
        let s = self.shape();
        if let Some(&bad) = index.iter().find(|&&i| i >= s.rows) {
            return Err(NumError::IndexOutOfRange {
                op: "gather_rows",
                index: bad,
                len: s.rows,
            });
        }
        let idx = index.to_vec();
        self.unary(
            Op::GatherRows {
                input: self.id,
                index: index.to_vec(),
            },
            move |x| {
                let mut out = Tensor::zeros(idx.len(), x.cols());
                for (k, &r) in idx.iter().enumerate() {
                    out.row_slice_mut(k).copy_from_slice(x.row_slice(r));
                }
                out
            },
        )
    }

    /// Sums row `k` into output row `index[k]`; output has `rows` rows.
    pub fn scatter_add_rows(self, index: &[usize], rows: usize) -> Result<Var<'t>> {
        let s = self.shape();
        if index.len() != s.rows {
            return Err(NumError::ShapeMismatch {
                op: "scatter_add_rows",
                left: s,
                right: Shape::new(index.len(), s.cols),
            });
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(NumError::IndexOutOfRange {
                op: "scatter_add_rows",
                index: bad,
                len: rows,
            });
        }
        let idx = index.to_vec();
        self.unary(
            Op::ScatterAddRows {
                input: self.id,
                index: index.to_vec(),
            },
            move |x| {
                let mut out = Tensor::zeros(rows, x.cols());
                for (k, &r) in idx.iter().enumerate() {
                    for (o, v) in out.row_slice_mut(r).iter_mut().zip(x.row_slice(k)) {
                        *o += v;
                    }
                }
                out
            },
        )
    }

    /// Scales every row to unit L2 norm.
    pub fn normalize_rows(self) -> Result<Var<'t>> {
        self.unary(Op::NormalizeRows(self.id), |x| {
            let mut out = x.clone();
            for r in 0..out.rows() {
                let n = row_norm(x.row_slice(r));
                out.row_slice_mut(r).iter_mut().for_each(|v| *v /= n);
            }
            out
        })
    }

    /// Pairwise cosine similarity of rows: `[n, d] x [m, d] -> [n, m]`.
    pub fn cosine_similarity(self, other: Var<'t>) -> Result<Var<'t>> {
        if self.shape().cols != other.shape().cols {
            return Err(NumError::ShapeMismatch {
                op: "cosine_similarity",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let a = self.normalize_rows()?;
        let b = other.normalize_rows()?.transpose()?;
        a.matmul(b)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax along `axis`.
pub fn softmax(x: &Tensor, axis: Axis) -> Tensor {
    let mut out = x.clone();
    match axis {
        Axis::Cols => {
            for r in 0..x.rows() {
                let row = out.row_slice_mut(r);
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    z += *v;
                }
                row.iter_mut().for_each(|v| *v /= z);
            }
        }
        Axis::Rows => {
            for c in 0..x.cols() {
                let m = (0..x.rows()).map(|r| x.get(r, c)).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..x.rows()).map(|r| (x.get(r, c) - m).exp()).sum();
                for r in 0..x.rows() {
                    out.set(r, c, (x.get(r, c) - m).exp() / z);
                }
            }
        }
    }
    out
}

fn segment_softmax(x: &Tensor, segments: &[usize]) -> Tensor {
    let n_seg = segments.iter().copied().max().map_or(0, |m| m + 1);
    let mut maxes = vec![f64::NEG_INFINITY; n_seg];
    for (i, &s) in segments.iter().enumerate() {
        maxes[s] = maxes[s].max(x.data()[i]);
    }
    let exps: Vec<f64> = segments
        .iter()
        .enumerate()
        .map(|(i, &s)| (x.data()[i] - maxes[s]).exp())
        .collect();
    let mut sums = vec![0.0; n_seg];
    for (e, &s) in exps.iter().zip(segments) {
        sums[s] += e;
    }
    let data = exps.iter().zip(segments).map(|(e, &s)| e / sums[s]).collect();
    Tensor::from_vec(x.rows(), 1, data).expect("segment softmax shape")
}

fn max_along(x: &Tensor, axis: Axis) -> (Tensor, Vec<usize>) {
    match axis {
        Axis::Rows => {
            let mut best = Vec::with_capacity(x.cols());
            let mut vals = Vec::with_capacity(x.cols());
            for c in 0..x.cols() {
                let mut arg = 0;
                for r in 1..x.rows() {
                    if x.get(r, c) > x.get(arg, c) {
                        arg = r;
                    }
                }
                best.push(arg);
                vals.push(x.get(arg, c));
            }
            (Tensor::row(&vals), best)
        }
        Axis::Cols => {
            let mut best = Vec::with_capacity(x.rows());
            let mut vals = Vec::with_capacity(x.rows());
            for r in 0..x.rows() {
                let row = x.row_slice(r);
                let mut arg = 0;
                for (c, &v) in row.iter().enumerate().skip(1) {
                    if v > row[arg] {
                        arg = c;
                    }
                }
                best.push(arg);
                vals.push(row[arg]);
            }
            (Tensor::column(&vals), best)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let tape = Tape::new();
        let a = tape.variable(Tensor::scalar(3.0)).unwrap();
        let b = tape.variable(Tensor::scalar(-2.0)).unwrap();
        let loss = a.mul(b).unwrap().add(a).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(a).unwrap().item(), -1.0);
        assert_eq!(g.wrt(b).unwrap().item(), 3.0);
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let s = softmax(&Tensor::row(&[1000.0, 1000.0, 0.0]), Axis::Cols);
        assert!((s.get(0, 0) - 0.5).abs() < 1e-12);
        assert!(s.data().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn segment_softmax_sums_to_one_per_segment() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::column(&[1.0, 2.0, 3.0, -1.0, 0.5])).unwrap();
        let s = x.segment_softmax(&[0, 0, 1, 1, 1]).unwrap().value();
        assert!((s.get(0, 0) + s.get(1, 0) - 1.0).abs() < 1e-15);
        assert!((s.get(2, 0) + s.get(3, 0) + s.get(4, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gather_then_scatter_counts_repeats() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::column(&[1.0, 10.0])).unwrap();
        let y = x.gather_rows(&[1, 0, 1]).unwrap().scatter_add_rows(&[0, 0, 1], 2).unwrap();
        assert_eq!(y.value().data(), &[11.0, 10.0]);
    }

    #[test]
    fn sigmoid_saturates_without_overflow() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
