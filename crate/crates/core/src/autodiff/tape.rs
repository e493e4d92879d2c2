//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and the ids of
//! its inputs. Because inputs must already exist when an op is recorded, the
//! node list is topologically ordered by construction and the backward pass
//! is a single sweep in reverse recording order.

use super::kernels;
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf(Option<ParamId>),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Square(Var),
    SoftmaxRows(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    Mse(Var, Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    SliceCols { input: Var, start: usize },
    ConcatRows(Vec<Var>),
    SliceRows { input: Var, start: usize },
    GatherRows { input: Var, indices: Vec<usize> },
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf(_) => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(..) => "relu",
            Op::Square(..) => "square",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::MeanRows(..) => "mean_rows",
            Op::Mse(..) => "mse_loss",
            Op::Transpose(..) => "transpose",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::GatherRows { .. } => "gather_rows",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf(_) => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b)
            | Op::Mse(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Relu(a)
            | Op::Square(a)
            | Op::SoftmaxRows(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::MeanRows(a)
            | Op::Transpose(a) => vec![*a],
            Op::SliceCols { input, .. } | Op::SliceRows { input, .. } | Op::GatherRows { input, .. } => vec![*input],
            Op::ConcatCols(vs) | Op::ConcatRows(vs) => vs.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded operation, as exposed for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct OpRecord {
    pub kind: &'static str,
    pub inputs: Vec<usize>,
    pub output: usize,
}

/// Gradients produced by one backward pass, indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

#[derive(Debug, Clone, Default)]
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn records(&self) -> Vec<OpRecord> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| OpRecord {
                kind: n.op.kind(),
                inputs: n.op.inputs().iter().map(|v| v.0).collect(),
                output: i,
            })
            .collect()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: value.with_requires_grad(false),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf holding data; differentiable iff `tensor.requires_grad()`.
    pub fn input(&mut self, tensor: Tensor) -> Var {
        let needs_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor.with_requires_grad(false),
            op: Op::Leaf(None),
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.input(tensor.with_requires_grad(false))
    }

    /// Leaf bound to a model parameter; its gradient flows back into the store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let t = store.get(id);
        self.nodes.push(Node {
            value: t.clone().with_requires_grad(false),
            op: Op::Leaf(Some(id)),
            needs_grad: t.requires_grad(),
        });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> Result<(usize, usize)> {
        self.nodes[v.0].value.dims2()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    fn elementwise(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(self.shape(a), data).expect("elementwise shape");
        self.push(t, op)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let data = self.data(a).iter().map(|&x| f(x)).collect();
        let t = Tensor::new(self.shape(a), data).expect("unary shape");
        self.push(t, op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a)?;
        let (k2, n) = self.dims(b)?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let out = kernels::matmul(self.data(a), self.data(b), m, k, n);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.elementwise(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.elementwise(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.elementwise(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    fn row_broadcast(
        &mut self,
        op_name: &'static str,
        a: Var,
        row: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        let (r, c) = self.dims(row)?;
        if r != 1 || c != n {
            return Err(Error::shape(op_name, self.shape(a), self.shape(row)));
        }
        let rv = self.data(row);
        let data = self
            .data(a)
            .chunks(n)
            .flat_map(|chunk| chunk.iter().zip(rv).map(|(&x, &y)| f(x, y)))
            .collect();
        Ok(self.push(Tensor::new(&[m, n], data)?, op))
    }

    /// `a[m×n] + row[1×n]` broadcast over rows (bias addition).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast("add_row", a, row, |x, y| x + y, Op::AddRow(a, row))
    }

    /// `a[m×n] ⊙ row[1×n]` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast("mul_row", a, row, |x, y| x * y, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    /// `y + c·k`, recorded as a scale followed by an add.
    pub fn axpy(&mut self, y: Var, c: f64, k: Var) -> Result<Var> {
        let ck = self.scale(k, c);
        self.add(y, ck)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    fn softmax_impl(&mut self, a: Var, causal: bool) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        if self.data(a).iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("NaN input to softmax_rows".into()));
        }
        if causal && m != n {
            return Err(Error::shape("causal_softmax_rows", self.shape(a), &[m, m]));
        }
        let out = kernels::softmax_rows(self.data(a), m, n, causal);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::SoftmaxRows(a)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.softmax_impl(a, false)
    }

    /// Softmax over each row of a square score matrix where row `i` only
    /// attends to columns `0..=i`; masked entries are exactly zero.
    pub fn causal_softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.softmax_impl(a, true)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.data(a);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Column means: `[m×n] → [1×n]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        let mut out = vec![0.0; n];
        for chunk in self.data(a).chunks(n) {
            out.iter_mut().zip(chunk).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        Ok(self.push(Tensor::new(&[1, n], out)?, Op::MeanRows(a)))
    }

    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("mse_loss", pred, target)?;
        let (p, t) = (self.data(pred), self.data(target));
        let s = p.iter().zip(t).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / p.len() as f64;
        Ok(self.push(Tensor::scalar(s), Op::Mse(pred, target)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        let out = kernels::transpose(self.data(a), m, n);
        Ok(self.push(Tensor::new(&[n, m], out)?, Op::Transpose(a)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of nothing".into()))?;
        let (m, _) = self.dims(first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p)?;
            if r != m {
                return Err(Error::shape("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        if len == 0 || start + len > n {
            return Err(Error::shape("slice_cols", self.shape(a), &[start, len]));
        }
        let out = self
            .data(a)
            .chunks(n)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        Ok(self.push(Tensor::new(&[m, len], out)?, Op::SliceCols { input: a, start }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows of nothing".into()))?;
        let (_, n) = self.dims(first)?;
        let mut m = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.dims(p)?;
            if c != n {
                return Err(Error::shape("concat_rows", self.shape(first), self.shape(p)));
            }
            m += r;
            out.extend_from_slice(self.data(p));
        }
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        if len == 0 || start + len > m {
            return Err(Error::shape("slice_rows", self.shape(a), &[start, len]));
        }
        let out = self.data(a)[start * n..(start + len) * n].to_vec();
        Ok(self.push(Tensor::new(&[len, n], out)?, Op::SliceRows { input: a, start }))
    }

    /// Row lookup: `out[i] = a[indices[i]]` (embedding tables, broadcasting
    /// one row to many).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        if indices.is_empty() {
            return Err(Error::Contract("gather_rows with no indices".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
            return Err(Error::shape("gather_rows", self.shape(a), &[bad]));
        }
        let d = self.data(a);
        let out = indices
            .iter()
            .flat_map(|&i| d[i * n..(i + 1) * n].iter().copied())
            .collect();
        Ok(self.push(
            Tensor::new(&[indices.len(), n], out)?,
            Op::GatherRows {
                input: a,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`. Gradients of parameter leaves are
    /// added into `store`; all node gradients are returned.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.gradients(loss)?;
        for (node, g) in self.nodes.iter().zip(&grads.grads) {
            if let (Op::Leaf(Some(id)), Some(g)) = (&node.op, g) {
                store.get_mut(*id).accumulate_grad(g)?;
            }
        }
        Ok(grads)
    }

    /// Reverse sweep without touching any parameter store.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let nodes = &self.nodes;
        let wants = |v: &Var| nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = nodes[a.0].value.dims2()?;
                let (_, n) = nodes[b.0].value.dims2()?;
                if wants(a) {
                    let ga = slot(grads, nodes, *a);
                    kernels::matmul_nt_acc(ga, g, nodes[b.0].value.data(), m, k, n);
                }
                if wants(b) {
                    let gb = slot(grads, nodes, *b);
                    kernels::matmul_tn_acc(gb, nodes[a.0].value.data(), g, m, k, n);
                }
            }
            Op::Add(a, b) => {
                for (v, sign) in [(a, 1.0), (b, 1.0)] {
                    if wants(v) {
                        axpy_into(slot(grads, nodes, *v), sign, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, sign) in [(a, 1.0), (b, -1.0)] {
                    if wants(v) {
                        axpy_into(slot(grads, nodes, *v), sign, g);
                    }
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(a, b), (b, a)] {
                    if wants(v) {
                        let od = nodes[other.0].value.data();
                        let s = slot(grads, nodes, *v);
                        for ((s, gv), o) in s.iter_mut().zip(g).zip(od) {
                            *s += gv * o;
                        }
                    }
                }
            }
            Op::AddRow(a, row) => {
                if wants(a) {
                    axpy_into(slot(grads, nodes, *a), 1.0, g);
                }
                if wants(row) {
                    let n = nodes[row.0].value.len();
                    let s = slot(grads, nodes, *row);
                    for chunk in g.chunks(n) {
                        s.iter_mut().zip(chunk).for_each(|(s, v)| *s += v);
                    }
                }
            }
            Op::MulRow(a, row) => {
                let rv = nodes[row.0].value.data();
                let n = rv.len();
                if wants(a) {
                    let s = slot(grads, nodes, *a);
                    for (schunk, gchunk) in s.chunks_mut(n).zip(g.chunks(n)) {
                        for ((s, gv), r) in schunk.iter_mut().zip(gchunk).zip(rv) {
                            *s += gv * r;
                        }
                    }
                }
                if wants(row) {
                    let ad = nodes[a.0].value.data();
                    let s = slot(grads, nodes, *row);
                    for (gchunk, achunk) in g.chunks(n).zip(ad.chunks(n)) {
                        for ((s, gv), av) in s.iter_mut().zip(gchunk).zip(achunk) {
                            *s += gv * av;
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                if wants(a) {
                    axpy_into(slot(grads, nodes, *a), *c, g);
                }
            }
            Op::AddScalar(a) => {
                if wants(a) {
                    axpy_into(slot(grads, nodes, *a), 1.0, g);
                }
            }
            Op::Relu(a) => {
                if wants(a) {
                    let x = nodes[a.0].value.data();
                    let s = slot(grads, nodes, *a);
                    for ((s, gv), xv) in s.iter_mut().zip(g).zip(x) {
                        if *xv > 0.0 {
                            *s += gv;
                        }
                    }
                }
            }
            Op::Square(a) => {
                if wants(a) {
                    let x = nodes[a.0].value.data();
                    let s = slot(grads, nodes, *a);
                    for ((s, gv), xv) in s.iter_mut().zip(g).zip(x) {
                        *s += 2.0 * xv * gv;
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                if wants(a) {
                    let y = node.value.data();
                    let (_, n) = node.value.dims2()?;
                    let s = slot(grads, nodes, *a);
                    for ((srow, grow), yrow) in s.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(x, y)| x * y).sum();
                        for ((s, gv), yv) in srow.iter_mut().zip(grow).zip(yrow) {
                            *s += yv * (gv - dot);
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if wants(a) {
                    let s = slot(grads, nodes, *a);
                    s.iter_mut().for_each(|s| *s += g[0]);
                }
            }
            Op::Mean(a) => {
                if wants(a) {
                    let s = slot(grads, nodes, *a);
                    let c = g[0] / s.len() as f64;
                    s.iter_mut().for_each(|s| *s += c);
                }
            }
            Op::MeanRows(a) => {
                if wants(a) {
                    let (m, n) = nodes[a.0].value.dims2()?;
                    let s = slot(grads, nodes, *a);
                    for chunk in s.chunks_mut(n) {
                        for (s, gv) in chunk.iter_mut().zip(g) {
                            *s += gv / m as f64;
                        }
                    }
                }
            }
            Op::Mse(p, t) => {
                let pd = nodes[p.0].value.data();
                let td = nodes[t.0].value.data();
                let c = 2.0 * g[0] / pd.len() as f64;
                for (v, sign) in [(p, 1.0), (t, -1.0)] {
                    if wants(v) {
                        let s = slot(grads, nodes, *v);
                        for ((s, x), y) in s.iter_mut().zip(pd).zip(td) {
                            *s += sign * c * (x - y);
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                if wants(a) {
                    let (m, n) = nodes[a.0].value.dims2()?;
                    let gt = kernels::transpose(g, n, m);
                    axpy_into(slot(grads, nodes, *a), 1.0, &gt);
                }
            }
            Op::ConcatCols(parts) => {
                let (_, total) = node.value.dims2()?;
                let mut offset = 0;
                for p in parts {
                    let (_, w) = nodes[p.0].value.dims2()?;
                    if wants(p) {
                        let s = slot(grads, nodes, *p);
                        for (srow, grow) in s.chunks_mut(w).zip(g.chunks(total)) {
                            srow.iter_mut()
                                .zip(&grow[offset..offset + w])
                                .for_each(|(s, v)| *s += v);
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols { input, start } => {
                if wants(input) {
                    let (_, n) = nodes[input.0].value.dims2()?;
                    let (_, w) = node.value.dims2()?;
                    let s = slot(grads, nodes, *input);
                    for (srow, grow) in s.chunks_mut(n).zip(g.chunks(w)) {
                        srow[*start..start + w].iter_mut().zip(grow).for_each(|(s, v)| *s += v);
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = nodes[p.0].value.len();
                    if wants(p) {
                        axpy_into(slot(grads, nodes, *p), 1.0, &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::SliceRows { input, start } => {
                if wants(input) {
                    let (_, n) = nodes[input.0].value.dims2()?;
                    let s = slot(grads, nodes, *input);
                    axpy_into(&mut s[start * n..start * n + g.len()], 1.0, g);
                }
            }
            Op::GatherRows { input, indices } => {
                if wants(input) {
                    let (_, n) = nodes[input.0].value.dims2()?;
                    let s = slot(grads, nodes, *input);
                    for (&i, grow) in indices.iter().zip(g.chunks(n)) {
                        axpy_into(&mut s[i * n..(i + 1) * n], 1.0, grow);
                    }
                }
            }
        }
        Ok(())
    }
}

fn slot<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'g mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()])
}

fn axpy_into(dst: &mut [f64], c: f64, src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += c * s);
}
