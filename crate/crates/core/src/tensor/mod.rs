//! Dense reverse-mode differentiation on 2-D `f64` arrays.
//!
//! A [`Tape`] records every operation of one forward pass; [`Var`] handles
//! point into it. Parameters are pulled from a [`ParamStore`] by name and their
//! gradients come back keyed by the same names after [`Tape::backward`].
//!
//! Only what the mesh networks need is implemented: matrix products, row and
//! column broadcasting, concatenation and slicing, gathers and segment
//! reductions over index lists, the attention primitives, activations,
//! normalisations and cross-entropy.

mod gradcheck;
mod optim;
mod store;

pub use gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};
pub use optim::{Adam, AdamConfig};
pub use store::{glorot, BufferStore, NamedArrays, ParamStore};

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};
use thiserror::Error;

/// Row index list shared between graph structures and the tape.
pub type Index = Arc<[usize]>;

pub const LEAKY_SLOPE: f64 = 0.2;
pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: index {index} out of range for {len} rows")]
    Index { op: &'static str, index: usize, len: usize },
    #[error("variable belongs to another tape")]
    Detached,
    #[error("backward already ran on this tape")]
    BackwardTwice,
    #[error("backward needs a 1x1 loss, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("{channels} channels cannot be split into {groups} groups")]
    Groups { channels: usize, groups: usize },
    #[error("unknown parameter `{0}`")]
    MissingParam(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    MulCol(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols(usize, usize),
    SliceRows(usize, usize),
    Gather(usize, Index),
    SegmentSum(usize, Index),
    SegmentSoftmax(usize, Index, usize),
    Attend {
        values: usize,
        weights: usize,
        src: Index,
        dst: Index,
    },
    Exp(usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    GroupNorm {
        x: usize,
        gain: usize,
        bias: usize,
        groups: usize,
        xhat: Array2<f64>,
        inv_std: Array2<f64>,
    },
    BatchNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    Sum(usize),
    MeanRows(usize),
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Array2<f64>,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Record of one forward computation.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    params: HashMap<String, usize>,
    grads: Vec<Option<Array2<f64>>>,
    done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn shape(a: &Array2<f64>) -> (usize, usize) {
    a.dim()
}

fn accumulate(grads: &mut [Option<Array2<f64>>], i: usize, g: Array2<f64>) {
    match &mut grads[i] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

fn check_index(op: &'static str, idx: &[usize], len: usize) -> Result<()> {
    match idx.iter().find(|&&i| i >= len) {
        Some(&index) => Err(TensorError::Index { op, index, len }),
        None => Ok(()),
    }
}

/// Batch statistics produced by a training-mode batch normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Array2<f64>,
    /// Unbiased variance (as used for running estimates).
    pub var: Array2<f64>,
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: HashMap::new(),
            grads: Vec::new(),
            done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape == self.id && v.idx < self.nodes.len() {
            Ok(v.idx)
        } else {
            Err(TensorError::Detached)
        }
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var { tape: self.id, idx: self.nodes.len() - 1 }
    }

    fn push_op(&mut self, value: Array2<f64>, op: Op, inputs: &[usize]) -> Var {
        let rg = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.push(value, op, rg)
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Named trainable parameter. Repeated requests on one tape return the
    /// same variable.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&i) = self.params.get(name) {
            return Ok(Var { tape: self.id, idx: i });
        }
        let value = store.get(name).ok_or_else(|| TensorError::MissingParam(name.to_string()))?.clone();
        let v = self.push(value, Op::Param, true);
        self.params.insert(name.to_string(), v.idx);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> Result<&Array2<f64>> {
        Ok(&self.nodes[self.idx(v)?].value)
    }

    pub fn shape(&self, v: Var) -> Result<(usize, usize)> {
        Ok(self.value(v)?.dim())
    }

    /// Value of a 1x1 variable.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let a = self.value(v)?;
        if a.dim() != (1, 1) {
            return Err(TensorError::NotScalar(a.dim()));
        }
        Ok(a[[0, 0]])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (x, y) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if x.ncols() != y.nrows() {
            return Err(TensorError::Shape { op: "matmul", left: shape(x), right: shape(y) });
        }
        let out = x.dot(y);
        Ok(self.push_op(out, Op::MatMul(ia, ib), &[ia, ib]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (x, y) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if x.dim() != y.dim() {
            return Err(TensorError::Shape { op: "add", left: shape(x), right: shape(y) });
        }
        let out = x + y;
        Ok(self.push_op(out, Op::Add(ia, ib), &[ia, ib]))
    }

    /// `x + row` with a `1 x C` row broadcast over all rows.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (ix, ir) = (self.idx(x)?, self.idx(row)?);
        let (a, r) = (&self.nodes[ix].value, &self.nodes[ir].value);
        if r.nrows() != 1 || r.ncols() != a.ncols() {
            return Err(TensorError::Shape { op: "add_row", left: shape(a), right: shape(r) });
        }
        let out = a + r;
        Ok(self.push_op(out, Op::AddRow(ix, ir), &[ix, ir]))
    }

    /// `x * row` with a `1 x C` row broadcast over all rows.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (ix, ir) = (self.idx(x)?, self.idx(row)?);
        let (a, r) = (&self.nodes[ix].value, &self.nodes[ir].value);
        if r.nrows() != 1 || r.ncols() != a.ncols() {
            return Err(TensorError::Shape { op: "mul_row", left: shape(a), right: shape(r) });
        }
        let out = a * r;
        Ok(self.push_op(out, Op::MulRow(ix, ir), &[ix, ir]))
    }

    /// `x * col` with an `N x 1` column broadcast over all columns.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (ix, ic) = (self.idx(x)?, self.idx(col)?);
        let (a, c) = (&self.nodes[ix].value, &self.nodes[ic].value);
        if c.ncols() != 1 || c.nrows() != a.nrows() {
            return Err(TensorError::Shape { op: "mul_col", left: shape(a), right: shape(c) });
        }
        let out = a * c;
        Ok(self.push_op(out, Op::MulCol(ix, ic), &[ix, ic]))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (x, y) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if x.dim() != y.dim() {
            return Err(TensorError::Shape { op: "mul", left: shape(x), right: shape(y) });
        }
        let out = x * y;
        Ok(self.push_op(out, Op::Mul(ia, ib), &[ia, ib]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let ix = self.idx(x)?;
        let out = &self.nodes[ix].value * s;
        Ok(self.push_op(out, Op::Scale(ix, s), &[ix]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let ids = parts.iter().map(|&p| self.idx(p)).collect::<Result<Vec<_>>>()?;
        let first = ids.first().ok_or_else(|| TensorError::Invalid("concat of nothing".into()))?;
        let rows = self.nodes[*first].value.nrows();
        for &i in &ids {
            if self.nodes[i].value.nrows() != rows {
                let (l, r) = (shape(&self.nodes[*first].value), shape(&self.nodes[i].value));
                return Err(TensorError::Shape { op: "concat_cols", left: l, right: r });
            }
        }
        let views: Vec<_> = ids.iter().map(|&i| self.nodes[i].value.view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("checked shapes");
        Ok(self.push_op(out, Op::ConcatCols(ids.clone()), &ids))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let ids = parts.iter().map(|&p| self.idx(p)).collect::<Result<Vec<_>>>()?;
        let first = ids.first().ok_or_else(|| TensorError::Invalid("concat of nothing".into()))?;
        let cols = self.nodes[*first].value.ncols();
        for &i in &ids {
            if self.nodes[i].value.ncols() != cols {
                let (l, r) = (shape(&self.nodes[*first].value), shape(&self.nodes[i].value));
                return Err(TensorError::Shape { op: "concat_rows", left: l, right: r });
            }
        }
        let views: Vec<_> = ids.iter().map(|&i| self.nodes[i].value.view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("checked shapes");
        Ok(self.push_op(out, Op::ConcatRows(ids.clone()), &ids))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let a = &self.nodes[ix].value;
        if start > end || end > a.ncols() {
            return Err(TensorError::Shape { op: "slice_cols", left: shape(a), right: (start, end) });
        }
        let out = a.slice(s![.., start..end]).to_owned();
        Ok(self.push_op(out, Op::SliceCols(ix, start), &[ix]))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let a = &self.nodes[ix].value;
        if start > end || end > a.nrows() {
            return Err(TensorError::Shape { op: "slice_rows", left: shape(a), right: (start, end) });
        }
        let out = a.slice(s![start..end, ..]).to_owned();
        Ok(self.push_op(out, Op::SliceRows(ix, start), &[ix]))
    }

    /// Row `i` of the result is row `index[i]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: &Index) -> Result<Var> {
        let ix = self.idx(x)?;
        let a = &self.nodes[ix].value;
        check_index("gather_rows", index, a.nrows())?;
        let mut out = Array2::zeros((index.len(), a.ncols()));
        for (mut row, &i) in out.rows_mut().into_iter().zip(index.iter()) {
            row.assign(&a.row(i));
        }
        Ok(self.push_op(out, Op::Gather(ix, index.clone()), &[ix]))
    }

    /// Row `t` of the result is the sum of the rows `i` of `x` with
    /// `segments[i] == t`; targets without rows stay zero.
    pub fn segment_sum(&mut self, x: Var, segments: &Index, targets: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let a = &self.nodes[ix].value;
        if segments.len() != a.nrows() {
            return Err(TensorError::Shape { op: "segment_sum", left: shape(a), right: (segments.len(), 1) });
        }
        check_index("segment_sum", segments, targets)?;
        let mut out = Array2::zeros((targets, a.ncols()));
        for (row, &t) in a.rows().into_iter().zip(segments.iter()) {
            let mut o = out.row_mut(t);
            o += &row;
        }
        Ok(self.push_op(out, Op::SegmentSum(ix, segments.clone()), &[ix]))
    }

    /// Column-wise softmax within each segment (one column per head).
    pub fn segment_softmax(&mut self, x: Var, segments: &Index, targets: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let a = &self.nodes[ix].value;
        if segments.len() != a.nrows() {
            return Err(TensorError::Shape { op: "segment_softmax", left: shape(a), right: (segments.len(), 1) });
        }
        check_index("segment_softmax", segments, targets)?;
        let cols = a.ncols();
        let mut max = Array2::from_elem((targets, cols), f64::NEG_INFINITY);
        for (row, &t) in a.rows().into_iter().zip(segments.iter()) {
            for (m, &v) in max.row_mut(t).iter_mut().zip(row) {
                if v > *m {
                    *m = v;
                }
            }
        }
        let mut out = Array2::zeros(a.dim());
        let mut denom: Array2<f64> = Array2::zeros((targets, cols));
        for ((mut o, row), &t) in out.rows_mut().into_iter().zip(a.rows()).zip(segments.iter()) {
            for c in 0..cols {
                let e = (row[c] - max[[t, c]]).exp();
                o[c] = e;
                denom[[t, c]] += e;
            }
        }
        for (mut o, &t) in out.rows_mut().into_iter().zip(segments.iter()) {
            for c in 0..cols {
                o[c] /= denom[[t, c]];
            }
        }
        Ok(self.push_op(out, Op::SegmentSoftmax(ix, segments.clone(), targets), &[ix]))
    }

    /// Multi-head weighted message aggregation.
    ///
    /// `values` is `N x (H * D)` and `weights` is `E x H`; the result is
    /// `targets x (H * D)` with head block `h` of row `dst[e]` accumulating
    /// `weights[e, h] * values[src[e], h-block]`.
    pub fn attend(&mut self, values: Var, weights: Var, src: &Index, dst: &Index, targets: usize) -> Result<Var> {
        let (iv, iw) = (self.idx(values)?, self.idx(weights)?);
        let (v, w) = (&self.nodes[iv].value, &self.nodes[iw].value);
        let heads = w.ncols();
        if src.len() != dst.len() || w.nrows() != src.len() || heads == 0 || v.ncols() % heads != 0 {
            return Err(TensorError::Shape { op: "attend", left: shape(v), right: shape(w) });
        }
        check_index("attend", src, v.nrows())?;
        check_index("attend", dst, targets)?;
        let d = v.ncols() / heads;
        let mut out = Array2::zeros((targets, v.ncols()));
        for e in 0..src.len() {
            let vr = v.row(src[e]);
            let mut or = out.row_mut(dst[e]);
            for h in 0..heads {
                let we = w[[e, h]];
                let span = h * d..(h + 1) * d;
                let (vs, os) = (vr.slice(s![span.clone()]), or.slice_mut(s![span]));
                Zip::from(os).and(vs).for_each(|o, &x| *o += we * x);
            }
        }
        let op = Op::Attend { values: iv, weights: iw, src: src.clone(), dst: dst.clone() };
        Ok(self.push_op(out, op, &[iv, iw]))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let out = self.nodes[ix].value.mapv(f64::exp);
        Ok(self.push_op(out, Op::Exp(ix), &[ix]))
    }

    /// `max(x, 0)`; the derivative at 0 is taken as 0.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let out = self.nodes[ix].value.mapv(|v| if v > 0.0 { v } else { 0.0 });
        Ok(self.push_op(out, Op::Relu(ix), &[ix]))
    }

    /// `x` for `x > 0`, `slope * x` otherwise (derivative at 0 is `slope`).
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let ix = self.idx(x)?;
        let out = self.nodes[ix].value.mapv(|v| if v > 0.0 { v } else { slope * v });
        Ok(self.push_op(out, Op::LeakyRelu(ix, slope), &[ix]))
    }

    /// Per-row normalisation over `groups` contiguous channel groups followed
    /// by a per-channel affine map (`gain`, `bias` are `1 x C`).
    pub fn group_norm(&mut self, x: Var, gain: Var, bias: Var, groups: usize, eps: f64) -> Result<Var> {
        let (ix, ig, ib) = (self.idx(x)?, self.idx(gain)?, self.idx(bias)?);
        let a = &self.nodes[ix].value;
        let c = a.ncols();
        if groups == 0 || !c.is_multiple_of(groups) {
            return Err(TensorError::Groups { channels: c, groups });
        }
        let (g, b) = (&self.nodes[ig].value, &self.nodes[ib].value);
        if g.dim() != (1, c) || b.dim() != (1, c) {
            return Err(TensorError::Shape { op: "group_norm", left: shape(a), right: shape(g) });
        }
        let m = c / groups;
        let mut xhat = Array2::zeros(a.dim());
        let mut inv_std = Array2::zeros((a.nrows(), groups));
        for r in 0..a.nrows() {
            for k in 0..groups {
                let seg = a.slice(s![r, k * m..(k + 1) * m]);
                let mean = seg.sum() / m as f64;
                let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
                let is = 1.0 / (var + eps).sqrt();
                inv_std[[r, k]] = is;
                for j in 0..m {
                    xhat[[r, k * m + j]] = (seg[j] - mean) * is;
                }
            }
        }
        let out = &xhat * g + b;
        let op = Op::GroupNorm { x: ix, gain: ig, bias: ib, groups, xhat, inv_std };
        Ok(self.push_op(out, op, &[ix, ig, ib]))
    }

    /// Training-mode batch normalisation: per-column statistics over the rows.
    /// Returns the output and the batch statistics for running estimates.
    pub fn batch_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let (ix, ig, ib) = (self.idx(x)?, self.idx(gain)?, self.idx(bias)?);
        let a = &self.nodes[ix].value;
        let (n, c) = a.dim();
        let (g, b) = (&self.nodes[ig].value, &self.nodes[ib].value);
        if g.dim() != (1, c) || b.dim() != (1, c) || n == 0 {
            return Err(TensorError::Shape { op: "batch_norm", left: shape(a), right: shape(g) });
        }
        let mean = a.mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
        let centred = a - &mean;
        let biased = centred.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty");
        let inv_std: Vec<f64> = biased.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = centred;
        for (mut col, &is) in xhat.columns_mut().into_iter().zip(&inv_std) {
            col *= is;
        }
        let out = &xhat * g + b;
        let unbiased = if n > 1 { &biased * (n as f64 / (n - 1) as f64) } else { biased.clone() };
        let stats = BatchStats { mean, var: unbiased.insert_axis(Axis(0)) };
        let op = Op::BatchNorm { x: ix, gain: ig, bias: ib, xhat, inv_std };
        Ok((self.push_op(out, op, &[ix, ig, ib]), stats))
    }

    /// Sum of all entries, as a 1x1 variable.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let out = Array2::from_elem((1, 1), self.nodes[ix].value.sum());
        Ok(self.push_op(out, Op::Sum(ix), &[ix]))
    }

    /// Column means, as a `1 x C` variable.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let a = &self.nodes[ix].value;
        if a.nrows() == 0 {
            return Err(TensorError::Invalid("mean of zero rows".into()));
        }
        let out = a.mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
        Ok(self.push_op(out, Op::MeanRows(ix), &[ix]))
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let il = self.idx(logits)?;
        let a = &self.nodes[il].value;
        let (n, c) = a.dim();
        if labels.len() != n || n == 0 {
            return Err(TensorError::Shape { op: "cross_entropy", left: shape(a), right: (labels.len(), 1) });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= c) {
            return Err(TensorError::Label { label, classes: c });
        }
        let mut probs = Array2::zeros((n, c));
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = a.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
            for k in 0..c {
                probs[[r, k]] = (row[k] - max).exp() / denom;
            }
            loss += denom.ln() - (row[label] - max);
        }
        let out = Array2::from_elem((1, 1), loss / n as f64);
        let op = Op::CrossEntropy { logits: il, labels: labels.to_vec(), probs };
        Ok(self.push_op(out, op, &[il]))
    }

    /// Reverse pass from a 1x1 `loss`. Can run once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.done {
            return Err(TensorError::BackwardTwice);
        }
        let il = self.idx(loss)?;
        let d = self.nodes[il].value.dim();
        if d != (1, 1) {
            return Err(TensorError::NotScalar(d));
        }
        self.done = true;
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[il] = Some(Array2::ones((1, 1)));
        for i in (0..=il).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn backprop(&self, i: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let val = |k: usize| &self.nodes[k].value;
        match &self.nodes[i].op {
            Op::Leaf | Op::Param => {}
            &Op::MatMul(a, b) => {
                if self.rg(a) {
                    accumulate(grads, a, g.dot(&val(b).t()));
                }
                if self.rg(b) {
                    accumulate(grads, b, val(a).t().dot(g));
                }
            }
            &Op::Add(a, b) => {
                if self.rg(a) {
                    accumulate(grads, a, g.clone());
                }
                if self.rg(b) {
                    accumulate(grads, b, g.clone());
                }
            }
            &Op::AddRow(x, r) => {
                if self.rg(x) {
                    accumulate(grads, x, g.clone());
                }
                if self.rg(r) {
                    accumulate(grads, r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            &Op::MulRow(x, r) => {
                if self.rg(x) {
                    accumulate(grads, x, g * val(r));
                }
                if self.rg(r) {
                    accumulate(grads, r, (g * val(x)).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            &Op::MulCol(x, c) => {
                if self.rg(x) {
                    accumulate(grads, x, g * val(c));
                }
                if self.rg(c) {
                    accumulate(grads, c, (g * val(x)).sum_axis(Axis(1)).insert_axis(Axis(1)));
                }
            }
            &Op::Mul(a, b) => {
                if self.rg(a) {
                    accumulate(grads, a, g * val(b));
                }
                if self.rg(b) {
                    accumulate(grads, b, g * val(a));
                }
            }
            &Op::Scale(x, s) => accumulate(grads, x, g * s),
            Op::ConcatCols(ids) => {
                let mut start = 0;
                for &k in ids {
                    let w = val(k).ncols();
                    if self.rg(k) {
                        accumulate(grads, k, g.slice(s![.., start..start + w]).to_owned());
                    }
                    start += w;
                }
            }
            Op::ConcatRows(ids) => {
                let mut start = 0;
                for &k in ids {
                    let h = val(k).nrows();
                    if self.rg(k) {
                        accumulate(grads, k, g.slice(s![start..start + h, ..]).to_owned());
                    }
                    start += h;
                }
            }
            &Op::SliceCols(x, start) => {
                let mut full = Array2::zeros(val(x).dim());
                full.slice_mut(s![.., start..start + g.ncols()]).assign(g);
                accumulate(grads, x, full);
            }
            &Op::SliceRows(x, start) => {
                let mut full = Array2::zeros(val(x).dim());
                full.slice_mut(s![start..start + g.nrows(), ..]).assign(g);
                accumulate(grads, x, full);
            }
            Op::Gather(x, index) => {
                let mut full = Array2::zeros(val(*x).dim());
                for (row, &t) in g.rows().into_iter().zip(index.iter()) {
                    let mut f = full.row_mut(t);
                    f += &row;
                }
                accumulate(grads, *x, full);
            }
            Op::SegmentSum(x, segments) => {
                let mut full = Array2::zeros(val(*x).dim());
                for (mut row, &t) in full.rows_mut().into_iter().zip(segments.iter()) {
                    row.assign(&g.row(t));
                }
                accumulate(grads, *x, full);
            }
            Op::SegmentSoftmax(x, segments, targets) => {
                let y = val(i);
                let cols = y.ncols();
                let mut dot: Array2<f64> = Array2::zeros((*targets, cols));
                for ((yr, gr), &t) in y.rows().into_iter().zip(g.rows()).zip(segments.iter()) {
                    for c in 0..cols {
                        dot[[t, c]] += yr[c] * gr[c];
                    }
                }
                let mut full = Array2::zeros(y.dim());
                for (r, &t) in segments.iter().enumerate() {
                    for c in 0..cols {
                        full[[r, c]] = y[[r, c]] * (g[[r, c]] - dot[[t, c]]);
                    }
                }
                accumulate(grads, *x, full);
            }
            Op::Attend { values, weights, src, dst } => {
                let (v, w) = (val(*values), val(*weights));
                let heads = w.ncols();
                let d = v.ncols() / heads;
                if self.rg(*values) {
                    let mut gv = Array2::zeros(v.dim());
                    for e in 0..src.len() {
                        let gr = g.row(dst[e]);
                        let mut out = gv.row_mut(src[e]);
                        for h in 0..heads {
                            let we = w[[e, h]];
                            let span = h * d..(h + 1) * d;
                            Zip::from(out.slice_mut(s![span.clone()]))
                                .and(gr.slice(s![span]))
                                .for_each(|o, &x| *o += we * x);
                        }
                    }
                    accumulate(grads, *values, gv);
                }
                if self.rg(*weights) {
                    let mut gw = Array2::zeros(w.dim());
                    for e in 0..src.len() {
                        let (gr, vr) = (g.row(dst[e]), v.row(src[e]));
                        for h in 0..heads {
                            let span = h * d..(h + 1) * d;
                            gw[[e, h]] = gr.slice(s![span.clone()]).dot(&vr.slice(s![span]));
                        }
                    }
                    accumulate(grads, *weights, gw);
                }
            }
            &Op::Exp(x) => accumulate(grads, x, g * val(i)),
            &Op::Relu(x) => {
                let mut out = g.clone();
                Zip::from(&mut out).and(val(x)).for_each(|o, &v| {
                    if v <= 0.0 {
                        *o = 0.0
                    }
                });
                accumulate(grads, x, out);
            }
            &Op::LeakyRelu(x, slope) => {
                let mut out = g.clone();
                Zip::from(&mut out).and(val(x)).for_each(|o, &v| {
                    if v <= 0.0 {
                        *o *= slope
                    }
                });
                accumulate(grads, x, out);
            }
            Op::GroupNorm { x, gain, bias, groups, xhat, inv_std } => {
                let gamma = val(*gain);
                if self.rg(*bias) {
                    accumulate(grads, *bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.rg(*gain) {
                    accumulate(grads, *gain, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.rg(*x) {
                    let dxhat = g * gamma;
                    let m = xhat.ncols() / groups;
                    let mut dx = Array2::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        for k in 0..*groups {
                            let span = k * m..(k + 1) * m;
                            let dh = dxhat.slice(s![r, span.clone()]);
                            let xh = xhat.slice(s![r, span.clone()]);
                            let sum_d = dh.sum();
                            let sum_dx = dh.dot(&xh);
                            let is = inv_std[[r, k]] / m as f64;
                            for j in 0..m {
                                dx[[r, k * m + j]] = is * (m as f64 * dh[j] - sum_d - xh[j] * sum_dx);
                            }
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::BatchNorm { x, gain, bias, xhat, inv_std } => {
                let gamma = val(*gain);
                if self.rg(*bias) {
                    accumulate(grads, *bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.rg(*gain) {
                    accumulate(grads, *gain, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.rg(*x) {
                    let dxhat = g * gamma;
                    let n = xhat.nrows() as f64;
                    let mut dx = Array2::zeros(xhat.dim());
                    for c in 0..xhat.ncols() {
                        let dh = dxhat.column(c);
                        let xh = xhat.column(c);
                        let sum_d = dh.sum();
                        let sum_dx = dh.dot(&xh);
                        let is = inv_std[c] / n;
                        for r in 0..xhat.nrows() {
                            dx[[r, c]] = is * (n * dh[r] - sum_d - xh[r] * sum_dx);
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            &Op::Sum(x) => accumulate(grads, x, Array2::from_elem(val(x).dim(), g[[0, 0]])),
            &Op::MeanRows(x) => {
                let n = val(x).nrows() as f64;
                let row = g / n;
                let full = row.broadcast(val(x).dim()).expect("1 x C broadcast").to_owned();
                accumulate(grads, x, full);
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let scale = g[[0, 0]] / labels.len() as f64;
                let mut d = probs.clone();
                for (r, &l) in labels.iter().enumerate() {
                    d[[r, l]] -= 1.0;
                }
                d *= scale;
                accumulate(grads, *logits, d);
            }
        }
    }

    /// Gradient of the loss with respect to `v`, after [`Tape::backward`].
    /// `None` if nothing flowed into it.
    pub fn grad(&self, v: Var) -> Result<Option<&Array2<f64>>> {
        let i = self.idx(v)?;
        Ok(self.grads.get(i).and_then(|g| g.as_ref()))
    }

    /// Gradients of every parameter used on this tape, by name. Parameters
    /// that received no gradient get zeros.
    pub fn param_grads(&self) -> BTreeMap<String, Array2<f64>> {
        self.params
            .iter()
            .map(|(name, &i)| {
                let g = self
                    .grads
                    .get(i)
                    .and_then(|g| g.clone())
                    .unwrap_or_else(|| Array2::zeros(self.nodes[i].value.dim()));
                (name.clone(), g)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_matmul() {
        let mut t = Tape::new();
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let i = t.constant(Array2::eye(3));
        let xv = t.constant(x.clone());
        let y = t.matmul(i, xv).unwrap();
        assert_eq!(t.value(y).unwrap(), &x);
    }

    #[test]
    fn shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Array2::zeros((2, 3)));
        let b = t.constant(Array2::zeros((2, 3)));
        let err = t.matmul(a, b).unwrap_err();
        assert_eq!(err.to_string(), "matmul: shape mismatch (2, 3) vs (2, 3)");
    }

    #[test]
    fn activations() {
        let mut t = Tape::new();
        let x = t.constant(array![[-1.0, -5.0, 2.0]]);
        let l = t.leaky_relu(x, 0.2).unwrap();
        let r = t.relu(x).unwrap();
        assert_eq!(t.value(l).unwrap(), &array![[-0.2, -1.0, 2.0]]);
        assert_eq!(t.value(r).unwrap(), &array![[0.0, 0.0, 2.0]]);
    }

    #[test]
    fn relu_gradient_at_zero_is_zero() {
        let mut store = ParamStore::new();
        store.insert("x", array![[0.0, -5.0, 3.0]]);
        let mut t = Tape::new();
        let x = t.param(&store, "x").unwrap();
        let r = t.relu(x).unwrap();
        let s = t.sum(r).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().unwrap(), &array![[0.0, 0.0, 1.0]]);
    }

    #[test]
    fn leaky_gradient_at_zero_is_slope() {
        let mut store = ParamStore::new();
        store.insert("x", array![[0.0]]);
        let mut t = Tape::new();
        let x = t.param(&store, "x").unwrap();
        let r = t.leaky_relu(x, 0.2).unwrap();
        let s = t.sum(r).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().unwrap(), &array![[0.2]]);
    }

    #[test]
    fn segment_softmax_examples() {
        let mut t = Tape::new();
        let x = t.constant(array![[0.0], [0.0]]);
        let seg: Index = vec![0, 0].into();
        let y = t.segment_softmax(x, &seg, 1).unwrap();
        assert_eq!(t.value(y).unwrap(), &array![[0.5], [0.5]]);

        let x = t.constant(array![[1.0], [1.0], [7.0]]);
        let seg: Index = vec![0, 0, 1].into();
        let y = t.segment_softmax(x, &seg, 2).unwrap();
        assert_eq!(t.value(y).unwrap(), &array![[0.5], [0.5], [1.0]]);
    }

    #[test]
    fn segment_sum_examples() {
        let mut t = Tape::new();
        let x = t.constant(array![[1.0], [2.0], [3.0]]);
        let seg: Index = vec![0, 0, 1].into();
        let y = t.segment_sum(x, &seg, 3).unwrap();
        assert_eq!(t.value(y).unwrap(), &array![[3.0], [3.0], [0.0]]);

        let empty = t.constant(Array2::zeros((0, 2)));
        let seg: Index = Vec::new().into();
        let y = t.segment_sum(empty, &seg, 2).unwrap();
        assert_eq!(t.value(y).unwrap(), &Array2::<f64>::zeros((2, 2)));
    }

    #[test]
    fn sum_of_linear_map_gradient() {
        let mut store = ParamStore::new();
        store.insert("w", array![[1.0, -1.0], [0.5, 2.0], [3.0, 0.0]]);
        let mut t = Tape::new();
        let x = t.constant(array![[1.0, 2.0, 3.0]]);
        let w = t.param(&store, "w").unwrap();
        let y = t.matmul(x, w).unwrap();
        let s = t.sum(y).unwrap();
        t.backward(s).unwrap();
        let g = t.param_grads();
        assert_eq!(g["w"], array![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]);
    }

    #[test]
    fn second_backward_fails() {
        let mut t = Tape::new();
        let x = t.constant(array![[1.0]]);
        let s = t.sum(x).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.backward(s), Err(TensorError::BackwardTwice));
    }

    #[test]
    fn foreign_variable_is_detached() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let x = a.constant(array![[1.0]]);
        assert_eq!(b.relu(x), Err(TensorError::Detached));
        let y = b.constant(array![[1.0]]);
        let _ = y;
        assert_eq!(b.backward(x), Err(TensorError::Detached));
    }

    #[test]
    fn cross_entropy_examples() {
        let mut t = Tape::new();
        let x = t.constant(Array2::zeros((2, 4)));
        let l = t.cross_entropy(x, &[0, 3]).unwrap();
        assert!((t.scalar(l).unwrap() - 4f64.ln()).abs() < 1e-15);

        let x = t.constant(array![[1000.0, 0.0, 0.0]]);
        let l = t.cross_entropy(x, &[0]).unwrap();
        assert!(t.scalar(l).unwrap().abs() < 1e-12);

        let x = t.constant(array![[0.0, 1.0]]);
        assert_eq!(t.cross_entropy(x, &[2]), Err(TensorError::Label { label: 2, classes: 2 }));
    }

    #[test]
    fn group_norm_constant_input_is_zero() {
        let mut t = Tape::new();
        let x = t.constant(Array2::from_elem((3, 8), 2.5));
        let g = t.constant(Array2::ones((1, 8)));
        let b = t.constant(Array2::zeros((1, 8)));
        let y = t.group_norm(x, g, b, 4, NORM_EPS).unwrap();
        assert!(t.value(y).unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(t.group_norm(x, g, b, 3, NORM_EPS), Err(TensorError::Groups { channels: 8, groups: 3 }));
    }
}
