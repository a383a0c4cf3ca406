use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use super::matrix::dot;
use super::{Matrix, SegmentIndex, SparseMatrix};
use crate::error::{Error, Result};
use crate::exec::{self, Exec};

/// Denominator guard of [`Tape::cosine_similarity`].
pub const COSINE_EPS: f64 = 1e-12;

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    idx: usize,
}

#[derive(Debug, Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy)]
enum Unary {
    Scale(f64),
    Offset(f64),
    Sigmoid,
    Exp,
    Log { floor: f64 },
    Abs,
    Relu,
    LeakyRelu(f64),
    Elu(f64),
    Sqrt,
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    SpMM(Arc<SparseMatrix>, usize),
    Binary(Binary, usize, usize),
    AddRow(usize, usize),
    Unary(Unary, usize),
    Map(usize, fn(f64) -> f64),
    Sum(usize),
    Mean(usize),
    RowSum(usize),
    RowSoftmax(usize),
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize),
    GatherRows(usize, Arc<[usize]>),
    GatherElems(usize, Arc<[(usize, usize)]>),
    SegmentSum {
        values: usize,
        weights: usize,
        index: Arc<SegmentIndex>,
    },
    Aggregate {
        x: usize,
        weights: usize,
        index: Arc<SegmentIndex>,
    },
    SegmentSoftmax(usize, Arc<SegmentIndex>),
    Cosine(usize, usize),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Wengert list of matrix operations supporting one reverse pass.
///
/// Values are recorded in execution order, so the node list is already
/// topologically sorted and backward is a single reverse sweep.
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
    consumed: bool,
    exec: Exec,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_exec(Exec::default())
    }

    pub fn with_exec(exec: Exec) -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            consumed: false,
            exec,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        v.idx
    }

    fn push(&mut self, value: Matrix, op: Op, inputs: &[usize]) -> Var {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    /// Copy of `v` cut off from the gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[self.idx(v)].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[self.idx(v)].requires_grad
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let value = self.nodes[ia]
            .value
            .matmul_with(&self.nodes[ib].value, self.exec)?;
        Ok(self.push(value, Op::MatMul(ia, ib), &[ia, ib]))
    }

    /// Constant sparse matrix times `b`.
    pub fn spmm(&mut self, s: Arc<SparseMatrix>, b: Var) -> Result<Var> {
        let ib = self.idx(b);
        if s.cols() != self.nodes[ib].value.rows() {
            return Err(Error::shape(
                "spmm",
                format!(
                    "sparse {}x{} times {:?}",
                    s.rows(),
                    s.cols(),
                    self.nodes[ib].value.shape()
                ),
            ));
        }
        let value = s.matmul(&self.nodes[ib].value, self.exec);
        Ok(self.push(value, Op::SpMM(s, ib), &[ib]))
    }

    // ---- elementwise binary (equal shapes or one 1x1 operand) ----------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let (x, y) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let f = match op {
            Binary::Add => |p: f64, q: f64| p + q,
            Binary::Sub => |p: f64, q: f64| p - q,
            Binary::Mul => |p: f64, q: f64| p * q,
            Binary::Div => |p: f64, q: f64| p / q,
        };
        let value = if x.shape() == y.shape() {
            x.zip_map(y, f)
        } else if y.shape() == (1, 1) {
            let q = y.item();
            x.map(|p| f(p, q))
        } else if x.shape() == (1, 1) {
            let p = x.item();
            y.map(|q| f(p, q))
        } else {
            return Err(Error::shape(
                "elementwise",
                format!("unsupported broadcast {:?} with {:?}", x.shape(), y.shape()),
            ));
        };
        Ok(self.push(value, Op::Binary(op, ia, ib), &[ia, ib]))
    }

    /// `x` (n x d) plus the row vector `b` (1 x d) on every row.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (ix, ib) = (self.idx(x), self.idx(b));
        let (xv, bv) = (&self.nodes[ix].value, &self.nodes[ib].value);
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + row {:?}", xv.shape(), bv.shape()),
            ));
        }
        let mut value = xv.clone();
        for r in 0..value.rows() {
            for (o, &c) in value.row_mut(r).iter_mut().zip(bv.data()) {
                *o += c;
            }
        }
        Ok(self.push(value, Op::AddRow(ix, ib), &[ix, ib]))
    }

    // ---- elementwise unary ---------------------------------------------

    fn unary(&mut self, op: Unary, x: Var) -> Var {
        let ix = self.idx(x);
        let value = self.nodes[ix].value.map(|v| unary_forward(op, v));
        self.push(value, Op::Unary(op, ix), &[ix])
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.unary(Unary::Scale(k), x)
    }

    /// `x + c` elementwise.
    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        self.unary(Unary::Offset(c), x)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(Unary::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(Unary::Log { floor: 0.0 }, x)
    }

    /// `ln(max(x, floor))`; zero gradient where the clamp is active.
    pub fn log_clamped(&mut self, x: Var, floor: f64) -> Var {
        self.unary(Unary::Log { floor }, x)
    }

    /// Subgradient 0 at 0.
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(Unary::Abs, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(Unary::Relu, x)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(Unary::LeakyRelu(slope), x)
    }

    pub fn elu(&mut self, x: Var, alpha: f64) -> Var {
        self.unary(Unary::Elu(alpha), x)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(Unary::Sqrt, x)
    }

    /// Custom elementwise op: `forward` applied now, `derivative` (of the
    /// input value) used in backward.
    pub fn map(&mut self, x: Var, forward: fn(f64) -> f64, derivative: fn(f64) -> f64) -> Var {
        let ix = self.idx(x);
        let value = self.nodes[ix].value.map(forward);
        self.push(value, Op::Map(ix, derivative), &[ix])
    }

    // ---- reductions ----------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.nonempty(x, "sum")?;
        let value = Matrix::scalar(self.nodes[ix].value.sum());
        Ok(self.push(value, Op::Sum(ix), &[ix]))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let ix = self.nonempty(x, "mean")?;
        let v = &self.nodes[ix].value;
        let value = Matrix::scalar(v.sum() / v.len() as f64);
        Ok(self.push(value, Op::Mean(ix), &[ix]))
    }

    /// Row sums as an n x 1 column.
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.nonempty(x, "row_sum")?;
        let v = &self.nodes[ix].value;
        let value = Matrix::column((0..v.rows()).map(|r| v.row(r).iter().sum()).collect());
        Ok(self.push(value, Op::RowSum(ix), &[ix]))
    }

    /// Row maxima. Not differentiable: the result is a constant.
    pub fn row_max(&mut self, x: Var) -> Result<Var> {
        let ix = self.nonempty(x, "row_max")?;
        let value = self.nodes[ix].value.row_max();
        Ok(self.constant(value))
    }

    fn nonempty(&self, x: Var, op: &'static str) -> Result<usize> {
        let ix = self.idx(x);
        if self.nodes[ix].value.is_empty() {
            return Err(Error::shape(op, "empty input"));
        }
        Ok(ix)
    }

    /// Softmax of each row, max-subtracted.
    pub fn row_softmax(&mut self, x: Var) -> Var {
        let ix = self.idx(x);
        let mut value = self.nodes[ix].value.clone();
        for r in 0..value.rows() {
            softmax_in_place(value.row_mut(r));
        }
        self.push(value, Op::RowSoftmax(ix), &[ix])
    }

    // ---- structural ----------------------------------------------------

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let ids: Vec<usize> = parts.iter().map(|&p| self.idx(p)).collect();
        let Some(&first) = ids.first() else {
            return Err(Error::shape("concat_cols", "no inputs"));
        };
        let rows = self.nodes[first].value.rows();
        if ids.iter().any(|&i| self.nodes[i].value.rows() != rows) {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let cols: usize = ids.iter().map(|&i| self.nodes[i].value.cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let out = value.row_mut(r);
            let mut at = 0;
            for &i in &ids {
                let src = self.nodes[i].value.row(r);
                out[at..at + src.len()].copy_from_slice(src);
                at += src.len();
            }
        }
        Ok(self.push(value, Op::ConcatCols(ids.clone()), &ids))
    }

    /// Columns `start..start + width` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let ix = self.idx(x);
        let v = &self.nodes[ix].value;
        if start + width > v.cols() {
            return Err(Error::shape(
                "slice_cols",
                format!("{start}+{width} > {}", v.cols()),
            ));
        }
        let mut value = Matrix::zeros(v.rows(), width);
        for r in 0..v.rows() {
            value
                .row_mut(r)
                .copy_from_slice(&v.row(r)[start..start + width]);
        }
        Ok(self.push(value, Op::SliceCols(ix, start), &[ix]))
    }

    /// Row `rows[e]` of `x` as output row `e`.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let ix = self.idx(x);
        let v = &self.nodes[ix].value;
        if rows.iter().any(|&r| r >= v.rows()) {
            return Err(Error::shape("gather_rows", "row index out of range"));
        }
        let mut value = Matrix::zeros(rows.len(), v.cols());
        for (e, &r) in rows.iter().enumerate() {
            value.row_mut(e).copy_from_slice(v.row(r));
        }
        Ok(self.push(value, Op::GatherRows(ix, rows.into()), &[ix]))
    }

    /// Picks `x[r, c]` for every `(r, c)`, as a column.
    pub fn gather_elems(&mut self, x: Var, at: &[(usize, usize)]) -> Result<Var> {
        let ix = self.idx(x);
        let v = &self.nodes[ix].value;
        if at.iter().any(|&(r, c)| r >= v.rows() || c >= v.cols()) {
            return Err(Error::shape("gather_elems", "index out of range"));
        }
        let value = Matrix::column(at.iter().map(|&(r, c)| v.get(r, c)).collect());
        Ok(self.push(value, Op::GatherElems(ix, at.into()), &[ix]))
    }

    // ---- neighbourhood segments ----------------------------------------

    /// `out[t] = Σ_{e: target(e) = t} weights[e] * values[e]`.
    pub fn segment_weighted_sum(
        &mut self,
        values: Var,
        weights: Var,
        index: &Arc<SegmentIndex>,
    ) -> Result<Var> {
        let (iv, iw) = (self.idx(values), self.idx(weights));
        let (v, w) = (&self.nodes[iv].value, &self.nodes[iw].value);
        if v.rows() != index.len() || w.shape() != (index.len(), 1) {
            return Err(Error::shape(
                "segment_weighted_sum",
                format!(
                    "values {:?}, weights {:?}, {} entries",
                    v.shape(),
                    w.shape(),
                    index.len()
                ),
            ));
        }
        let d = v.cols();
        let mut value = Matrix::zeros(index.num_targets(), d);
        for t in 0..index.num_targets() {
            let out = value.row_mut(t);
            for e in index.group(t) {
                let we = w.data()[e];
                for (o, &x) in out.iter_mut().zip(v.row(e)) {
                    *o += we * x;
                }
            }
        }
        let op = Op::SegmentSum {
            values: iv,
            weights: iw,
            index: Arc::clone(index),
        };
        Ok(self.push(value, op, &[iv, iw]))
    }

    /// `out[t] = Σ_{e: target(e) = t} weights[e] * x[source(e)]`, without
    /// materializing the gathered rows.
    pub fn aggregate(&mut self, x: Var, weights: Var, index: &Arc<SegmentIndex>) -> Result<Var> {
        let (ix, iw) = (self.idx(x), self.idx(weights));
        let (v, w) = (&self.nodes[ix].value, &self.nodes[iw].value);
        if v.rows() != index.num_targets() || w.shape() != (index.len(), 1) {
            return Err(Error::shape(
                "aggregate",
                format!(
                    "x {:?}, weights {:?}, {} entries",
                    v.shape(),
                    w.shape(),
                    index.len()
                ),
            ));
        }
        let d = v.cols();
        let mut value = Matrix::zeros(index.num_targets(), d);
        exec::for_each_row(self.exec, value.data_mut(), d, |t, out| {
            for e in index.group(t) {
                let we = w.data()[e];
                for (o, &xv) in out.iter_mut().zip(v.row(index.sources()[e])) {
                    *o += we * xv;
                }
            }
        });
        let op = Op::Aggregate {
            x: ix,
            weights: iw,
            index: Arc::clone(index),
        };
        Ok(self.push(value, op, &[ix, iw]))
    }

    /// Softmax of an E' x 1 column within each target group.
    pub fn segment_softmax(&mut self, logits: Var, index: &Arc<SegmentIndex>) -> Result<Var> {
        let il = self.idx(logits);
        let l = &self.nodes[il].value;
        if l.shape() != (index.len(), 1) {
            return Err(Error::shape(
                "segment_softmax",
                format!("{:?} for {} entries", l.shape(), index.len()),
            ));
        }
        let mut value = l.clone();
        for t in 0..index.num_targets() {
            softmax_in_place(&mut value.data_mut()[index.group(t)]);
        }
        Ok(self.push(value, Op::SegmentSoftmax(il, Arc::clone(index)), &[il]))
    }

    /// `uᵀv / (‖u‖‖v‖ + ε)` for two equal-shape tensors, as a 1x1 value.
    pub fn cosine_similarity(&mut self, u: Var, v: Var) -> Result<Var> {
        let (iu, iv) = (self.idx(u), self.idx(v));
        let (a, b) = (&self.nodes[iu].value, &self.nodes[iv].value);
        if a.shape() != b.shape() || a.is_empty() {
            return Err(Error::shape(
                "cosine_similarity",
                format!("{:?} vs {:?}", a.shape(), b.shape()),
            ));
        }
        let (d, na, nb) = cosine_parts(a, b);
        let value = Matrix::scalar(d / (na * nb + COSINE_EPS));
        Ok(self.push(value, Op::Cosine(iu, iv), &[iu, iv]))
    }

    // ---- reverse pass --------------------------------------------------

    /// Reverse sweep from a scalar `loss`. May be called once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let il = self.idx(loss);
        if self.consumed {
            return Err(Error::Tape("backward already ran on this tape".into()));
        }
        if self.nodes[il].value.shape() != (1, 1) {
            return Err(Error::Tape(format!(
                "backward needs a scalar loss, got {:?}",
                self.nodes[il].value.shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[il] = Some(Matrix::scalar(1.0));
        for i in (0..=il).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                if matches!(n.op, Op::Leaf) && n.requires_grad {
                    g
                } else {
                    None
                }
            })
            .collect();
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes,
        })
    }

    fn propagate(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[i];
        let val = |j: usize| &self.nodes[j].value;
        let wants = |j: usize| self.nodes[j].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.matmul_nt(val(*b), self.exec));
                }
                if wants(*b) {
                    accumulate(grads, *b, val(*a).matmul_tn(g));
                }
            }
            Op::SpMM(s, b) => {
                if wants(*b) {
                    accumulate(grads, *b, s.matmul_t(g, self.exec));
                }
            }
            Op::Binary(op, a, b) => {
                let (x, y) = (val(*a), val(*b));
                if wants(*a) {
                    let local = broadcast_zip(g, x, y, |g, _, q| match op {
                        Binary::Add | Binary::Sub => g,
                        Binary::Mul => g * q,
                        Binary::Div => g / q,
                    });
                    accumulate(grads, *a, reduce_to(local, x.shape()));
                }
                if wants(*b) {
                    let local = broadcast_zip(g, x, y, |g, p, q| match op {
                        Binary::Add => g,
                        Binary::Sub => -g,
                        Binary::Mul => g * p,
                        Binary::Div => -g * p / (q * q),
                    });
                    accumulate(grads, *b, reduce_to(local, y.shape()));
                }
            }
            Op::AddRow(x, b) => {
                if wants(*x) {
                    accumulate(grads, *x, g.clone());
                }
                if wants(*b) {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &v) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::Unary(op, x) => {
                let (xv, y) = (val(*x), &node.value);
                let data = (0..xv.len())
                    .map(|k| g.data()[k] * unary_derivative(*op, xv.data()[k], y.data()[k]))
                    .collect();
                accumulate(
                    grads,
                    *x,
                    Matrix::from_vec(xv.rows(), xv.cols(), data).expect("same shape"),
                );
            }
            Op::Map(x, derivative) => {
                let d = val(*x).zip_map(g, |v, gv| gv * derivative(v));
                accumulate(grads, *x, d);
            }
            Op::Sum(x) => {
                let (r, c) = val(*x).shape();
                accumulate(grads, *x, Matrix::filled(r, c, g.item()));
            }
            Op::Mean(x) => {
                let (r, c) = val(*x).shape();
                accumulate(grads, *x, Matrix::filled(r, c, g.item() / (r * c) as f64));
            }
            Op::RowSum(x) => {
                let (r, c) = val(*x).shape();
                let mut d = Matrix::zeros(r, c);
                for row in 0..r {
                    d.row_mut(row).iter_mut().for_each(|v| *v = g.data()[row]);
                }
                accumulate(grads, *x, d);
            }
            Op::RowSoftmax(x) => {
                let y = &node.value;
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let inner = dot(yr, gr);
                    for ((o, &yv), &gv) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - inner);
                    }
                }
                accumulate(grads, *x, d);
            }
            Op::ConcatCols(parts) => {
                let mut at = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if wants(p) {
                        let mut d = Matrix::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            d.row_mut(r).copy_from_slice(&g.row(r)[at..at + w]);
                        }
                        accumulate(grads, p, d);
                    }
                    at += w;
                }
            }
            Op::SliceCols(x, start) => {
                let (r, c) = val(*x).shape();
                let mut d = Matrix::zeros(r, c);
                let w = g.cols();
                for row in 0..r {
                    d.row_mut(row)[*start..start + w].copy_from_slice(g.row(row));
                }
                accumulate(grads, *x, d);
            }
            Op::GatherRows(x, rows) => {
                let (r, c) = val(*x).shape();
                let mut d = Matrix::zeros(r, c);
                for (e, &src) in rows.iter().enumerate() {
                    for (o, &v) in d.row_mut(src).iter_mut().zip(g.row(e)) {
                        *o += v;
                    }
                }
                accumulate(grads, *x, d);
            }
            Op::GatherElems(x, at) => {
                let (r, c) = val(*x).shape();
                let mut d = Matrix::zeros(r, c);
                for (e, &(row, col)) in at.iter().enumerate() {
                    d.set(row, col, d.get(row, col) + g.data()[e]);
                }
                accumulate(grads, *x, d);
            }
            Op::SegmentSum {
                values,
                weights,
                index,
            } => {
                let (v, w) = (val(*values), val(*weights));
                if wants(*values) {
                    let mut d = Matrix::zeros(v.rows(), v.cols());
                    for (e, &t) in index.targets().iter().enumerate() {
                        let we = w.data()[e];
                        for (o, &gv) in d.row_mut(e).iter_mut().zip(g.row(t)) {
                            *o = we * gv;
                        }
                    }
                    accumulate(grads, *values, d);
                }
                if wants(*weights) {
                    let d = Matrix::column(
                        index
                            .targets()
                            .iter()
                            .enumerate()
                            .map(|(e, &t)| dot(v.row(e), g.row(t)))
                            .collect(),
                    );
                    accumulate(grads, *weights, d);
                }
            }
            Op::Aggregate { x, weights, index } => {
                let (v, w) = (val(*x), val(*weights));
                if wants(*x) {
                    let mut d = Matrix::zeros(v.rows(), v.cols());
                    for (e, (&t, &s)) in index.targets().iter().zip(index.sources()).enumerate() {
                        let we = w.data()[e];
                        for (o, &gv) in d.row_mut(s).iter_mut().zip(g.row(t)) {
                            *o += we * gv;
                        }
                    }
                    accumulate(grads, *x, d);
                }
                if wants(*weights) {
                    let d = Matrix::column(
                        index
                            .targets()
                            .iter()
                            .zip(index.sources())
                            .map(|(&t, &s)| dot(v.row(s), g.row(t)))
                            .collect(),
                    );
                    accumulate(grads, *weights, d);
                }
            }
            Op::SegmentSoftmax(x, index) => {
                let y = node.value.data();
                let mut d = Matrix::zeros(y.len(), 1);
                for t in 0..index.num_targets() {
                    let range = index.group(t);
                    let inner: f64 = range.clone().map(|e| y[e] * g.data()[e]).sum();
                    for e in range {
                        d.data_mut()[e] = y[e] * (g.data()[e] - inner);
                    }
                }
                accumulate(grads, *x, d);
            }
            Op::Cosine(u, v) => {
                let (a, b) = (val(*u), val(*v));
                let (d, na, nb) = cosine_parts(a, b);
                let den = na * nb + COSINE_EPS;
                let gv = g.item();
                // dc/da = b/den - d * nb * (a/na) / den^2, with a/na := 0 when na = 0
                let grad_of = |p: &Matrix, q: &Matrix, np: f64, nq: f64| {
                    let k = if np > 0.0 {
                        d * nq / (np * den * den)
                    } else {
                        0.0
                    };
                    p.zip_map(q, |pv, qv| gv * (qv / den - k * pv))
                };
                if wants(*u) {
                    accumulate(grads, *u, grad_of(a, b, na, nb));
                }
                if wants(*v) {
                    accumulate(grads, *v, grad_of(b, a, nb, na));
                }
            }
        }
    }
}

/// Gradients of the trainable leaves of one tape.
pub struct Gradients {
    tape: u32,
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// `None` when the loss does not depend on `v`.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        assert_eq!(v.tape, self.tape, "variable belongs to a different tape");
        self.grads[v.idx].as_ref()
    }

    /// Gradient of `v`, zero-filled when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| {
            let (r, c) = self.shapes[v.idx];
            Matrix::zeros(r, c)
        })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], i: usize, d: Matrix) {
    match &mut grads[i] {
        Some(g) => g.add_assign(&d),
        slot => *slot = Some(d),
    }
}

fn broadcast_zip(g: &Matrix, x: &Matrix, y: &Matrix, f: impl Fn(f64, f64, f64) -> f64) -> Matrix {
    let mut out = Matrix::zeros(g.rows(), g.cols());
    let xs = x.len() == 1 && g.len() != 1;
    let ys = y.len() == 1 && g.len() != 1;
    for (k, o) in out.data_mut().iter_mut().enumerate() {
        let p = if xs { x.data()[0] } else { x.data()[k] };
        let q = if ys { y.data()[0] } else { y.data()[k] };
        *o = f(g.data()[k], p, q);
    }
    out
}

fn reduce_to(local: Matrix, shape: (usize, usize)) -> Matrix {
    if local.shape() == shape {
        local
    } else {
        Matrix::scalar(local.sum())
    }
}

fn unary_forward(op: Unary, x: f64) -> f64 {
    match op {
        Unary::Scale(k) => k * x,
        Unary::Offset(c) => x + c,
        Unary::Sigmoid => sigmoid(x),
        Unary::Exp => x.exp(),
        Unary::Log { floor } => x.max(floor).ln(),
        Unary::Abs => x.abs(),
        Unary::Relu => x.max(0.0),
        Unary::LeakyRelu(s) => {
            if x > 0.0 {
                x
            } else {
                s * x
            }
        }
        Unary::Elu(a) => {
            if x > 0.0 {
                x
            } else {
                a * x.exp_m1()
            }
        }
        Unary::Sqrt => x.sqrt(),
    }
}

fn unary_derivative(op: Unary, x: f64, y: f64) -> f64 {
    match op {
        Unary::Scale(k) => k,
        Unary::Offset(_) => 1.0,
        Unary::Sigmoid => y * (1.0 - y),
        Unary::Exp => y,
        Unary::Log { floor } => {
            if x > floor {
                1.0 / x
            } else {
                0.0
            }
        }
        Unary::Abs => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        Unary::Relu => (x > 0.0) as u8 as f64,
        Unary::LeakyRelu(s) => {
            if x > 0.0 {
                1.0
            } else {
                s
            }
        }
        Unary::Elu(a) => {
            if x > 0.0 {
                1.0
            } else {
                y + a
            }
        }
        Unary::Sqrt => 0.5 / y,
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in xs.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    for v in xs.iter_mut() {
        *v /= total;
    }
}

fn cosine_parts(a: &Matrix, b: &Matrix) -> (f64, f64, f64) {
    let d = dot(a.data(), b.data());
    let na = dot(a.data(), a.data()).sqrt();
    let nb = dot(b.data(), b.data()).sqrt();
    (d, na, nb)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matmul_identity_and_sum_gradient() {
        let mut t = Tape::new();
        let a = t.param(Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]));
        let i = t.constant(Matrix::identity(2));
        let p = t.matmul(a, i).unwrap();
        assert_eq!(t.value(p), t.value(a));
        let s = t.sum(p).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(a), Matrix::ones(2, 2));
        assert!(g.get(i).is_none());
    }

    #[test]
    fn backward_twice_and_non_scalar_fail() {
        let mut t = Tape::new();
        let w = t.param(Matrix::ones(2, 2));
        assert!(matches!(t.backward(w), Err(Error::Tape(_))));
        let s = t.sum(w).unwrap();
        t.backward(s).unwrap();
        assert!(t.backward(s).is_err());
    }

    #[test]
    fn unrelated_parameter_gets_zero_gradient() {
        let mut t = Tape::new();
        let w = t.param(Matrix::ones(2, 3));
        let x = t.param(Matrix::ones(1, 1));
        let loss = t.scale(x, 2.0);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(w), Matrix::zeros(2, 3));
        assert_eq!(g.wrt(x).item(), 2.0);
    }

    #[test]
    fn pointwise_values() {
        let mut t = Tape::new();
        let z = t.param(Matrix::from_rows(&[[0.0, -0.5]]));
        let s = t.sigmoid(z);
        assert_eq!(t.value(s).data()[0], 0.5);
        let a = t.abs(z);
        assert_eq!(t.value(a).data(), &[0.0, 0.5]);
        let loss = t.sum(a).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(z).data(), &[0.0, -1.0]);
    }

    #[test]
    fn reductions() {
        let mut t = Tape::new();
        let ones = t.constant(Matrix::ones(3, 3));
        let s = t.sum(ones).unwrap();
        assert_eq!(t.value(s).item(), 9.0);
        let x = t.param(Matrix::from_rows(&[[2.0, 4.0]]));
        let m = t.mean(x).unwrap();
        assert_eq!(t.value(m).item(), 3.0);
        let g = t.backward(m).unwrap();
        assert_eq!(g.wrt(x).data(), &[0.5, 0.5]);
        let mut t = Tape::new();
        let empty = t.constant(Matrix::zeros(0, 3));
        assert!(t.sum(empty).is_err());
    }

    #[test]
    fn segment_softmax_examples() {
        let idx = Arc::new(SegmentIndex::new(2, vec![0, 0, 1], vec![0, 1, 1]).unwrap());
        let mut t = Tape::new();
        let l = t.constant(Matrix::column(vec![1.0, 1.0, 5.0]));
        let y = t.segment_softmax(l, &idx).unwrap();
        assert_eq!(t.value(y).data(), &[0.5, 0.5, 1.0]);
        let l = t.constant(Matrix::column(vec![0.0, 3f64.ln(), -2.0]));
        let y = t.segment_softmax(l, &idx).unwrap();
        assert!(close(t.value(y).data()[0], 0.25, 1e-15));
        assert!(close(t.value(y).data()[1], 0.75, 1e-15));
    }

    #[test]
    fn segment_weighted_sum_examples() {
        let one = Arc::new(SegmentIndex::new(1, vec![0], vec![0]).unwrap());
        let mut t = Tape::new();
        let v = t.constant(Matrix::from_rows(&[[1.5, -2.0]]));
        let w = t.constant(Matrix::column(vec![1.0]));
        let out = t.segment_weighted_sum(v, w, &one).unwrap();
        assert_eq!(t.value(out).data(), &[1.5, -2.0]);

        let two = Arc::new(SegmentIndex::new(2, vec![0, 0, 1], vec![0, 1, 1]).unwrap());
        let v = t.constant(Matrix::from_rows(&[[3.0, 1.0], [3.0, 1.0], [0.0, 0.0]]));
        let w = t.constant(Matrix::column(vec![0.5, 0.5, 1.0]));
        let out = t.segment_weighted_sum(v, w, &two).unwrap();
        assert_eq!(t.value(out).row(0), &[3.0, 1.0]);
        let bad = t.constant(Matrix::column(vec![1.0]));
        assert!(t.segment_weighted_sum(v, bad, &two).is_err());
    }

    #[test]
    fn cosine_examples() {
        let mut t = Tape::new();
        let u = t.param(Matrix::column(vec![1.0, 0.0]));
        let v = t.param(Matrix::column(vec![1.0, 1.0]));
        let w = t.param(Matrix::column(vec![0.0, 3.0]));
        let c = t.cosine_similarity(u, v).unwrap();
        assert!(close(
            t.value(c).item(),
            std::f64::consts::FRAC_1_SQRT_2,
            1e-12
        ));
        let c = t.cosine_similarity(u, u).unwrap();
        assert!(close(t.value(c).item(), 1.0, 1e-11));
        let c = t.cosine_similarity(u, w).unwrap();
        assert_eq!(t.value(c).item(), 0.0);

        let mut t = Tape::new();
        let z1 = t.param(Matrix::zeros(3, 1));
        let z2 = t.param(Matrix::zeros(3, 1));
        let c = t.cosine_similarity(z1, z2).unwrap();
        assert_eq!(t.value(c).item(), 0.0);
        let g = t.backward(c).unwrap();
        assert_eq!(g.wrt(z1), Matrix::zeros(3, 1));
        assert_eq!(g.wrt(z2), Matrix::zeros(3, 1));
    }

    #[test]
    fn broadcast_rules() {
        let mut t = Tape::new();
        let x = t.param(Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]));
        let k = t.param(Matrix::scalar(2.0));
        let y = t.mul(x, k).unwrap();
        let s = t.sum(y).unwrap();
        let bad = t.constant(Matrix::ones(1, 2));
        assert!(t.add(x, bad).is_err());
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(k).item(), 10.0);
        assert_eq!(g.wrt(x), Matrix::filled(2, 2, 2.0));
    }

    #[test]
    #[should_panic(expected = "different tape")]
    fn cross_tape_use_panics() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let x = a.param(Matrix::ones(1, 1));
        b.sigmoid(x);
    }
}
