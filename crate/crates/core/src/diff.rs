//! Reverse-mode differentiation over dense row-major `f64` matrices.
//!
//! A [`Graph`] records every operation as a node that owns its forward value.
//! Nodes are appended in evaluation order, so iterating them backwards is a
//! valid reverse topological order. Calling [`Graph::backward`] on a scalar
//! node fills a gradient for every node reachable from it; gradients from
//! multiple uses of one node accumulate.
//!
//! ```
//! use hycon::diff::{Graph, Matrix};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Matrix::row_vector(vec![1.0, 2.0]));
//! let sq = g.square(x);
//! let y = g.sum(sq);
//! g.backward(y).unwrap();
//! assert_eq!(g.scalar(y), 5.0);
//! assert_eq!(g.grad(x).data(), &[2.0, 4.0]);
//! ```

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Lower bound on the row norm used by [`Graph::l2_normalize_rows`].
pub const NORM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn scalar(v: f64) -> Self {
        Matrix {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Matrix {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        let (n, p, q) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(n, q);
        for i in 0..n {
            let orow = &mut out.data[i * q..(i + 1) * q];
            for k in 0..p {
                let a = self.data[i * p + k];
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in orow.iter_mut().zip(&other.data[k * q..(k + 1) * q]) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`, i.e. all pairwise row dot products.
    pub fn matmul_bt(&self, other: &Matrix) -> Matrix {
        let (n, m) = (self.rows, other.rows);
        let mut out = Matrix::zeros(n, m);
        for i in 0..n {
            let a = self.row(i);
            for j in 0..m {
                out.data[i * m + j] = dot_slices(a, other.row(j));
            }
        }
        out
    }

    /// `selfᵀ · other`
    pub fn matmul_at(&self, other: &Matrix) -> Matrix {
        let (p, n, q) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(n, q);
        for k in 0..p {
            let brow = other.row(k);
            for i in 0..n {
                let a = self.data[k * n + i];
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out.data[i * q..(i + 1) * q].iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }
}

pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: NodeId, w: NodeId, b: NodeId },
    MatMul(NodeId, NodeId),
    MatMulBt(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddN(Vec<NodeId>),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    SubScalar(NodeId, NodeId),
    Scale(NodeId, f64),
    Offset(NodeId),
    Relu(NodeId),
    Square(NodeId),
    Abs(NodeId),
    Ln(NodeId),
    L2NormalizeRows(NodeId),
    Dot(NodeId, NodeId),
    RowSum(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Gather(NodeId, Vec<usize>),
    SegmentSum(NodeId, Vec<usize>),
    View(NodeId, usize),
    ConcatCols(Vec<NodeId>),
    AppendOnes(NodeId),
    RowOuter(NodeId, NodeId),
    Log1pSumExp(NodeId),
    Stack(Vec<NodeId>),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// A computation graph. Build it forward with the op methods, then call
/// [`Graph::backward`] once on a scalar node.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Input node (parameter or constant).
    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.len(), 1);
        v.data[0]
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    /// `x·W + b`, with `b` a 1×q row broadcast over the rows of `x`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (k, p) = self.shape(x);
        let (wp, q) = self.shape(w);
        if p != wp || self.shape(b) != (1, q) {
            return Err(Error::Shape(format!(
                "linear: x {k}x{p}, W {wp}x{q}, b {:?}",
                self.shape(b)
            )));
        }
        let mut y = self.value(x).matmul(self.value(w));
        let bias = self.value(b).data.clone();
        for r in 0..k {
            for (o, bb) in y.data[r * q..(r + 1) * q].iter_mut().zip(&bias) {
                *o += bb;
            }
        }
        Ok(self.push(y, Op::Linear { x, w, b }))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a).1 != self.shape(b).0 {
            return Err(Error::Shape(format!(
                "matmul: {:?} · {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let y = self.value(a).matmul(self.value(b));
        Ok(self.push(y, Op::MatMul(a, b)))
    }

    /// All pairwise row dot products `a·bᵀ`.
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a).1 != self.shape(b).1 {
            return Err(Error::Shape(format!(
                "matmul_bt: {:?} · {:?}ᵀ",
                self.shape(a),
                self.shape(b)
            )));
        }
        let y = self.value(a).matmul_bt(self.value(b));
        Ok(self.push(y, Op::MatMulBt(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let y = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(y, Op::Add(a, b)))
    }

    /// Elementwise sum of several same-shape nodes. Each element's terms are
    /// added in ascending order, so the result does not depend on the order
    /// of `parts`.
    pub fn add_n(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(Error::Shape("add_n of nothing".into()));
        };
        for &p in &parts[1..] {
            self.same_shape(first, p, "add_n")?;
        }
        let mut y = Matrix::zeros(self.shape(first).0, self.shape(first).1);
        let mut terms = Vec::with_capacity(parts.len());
        for (i, o) in y.data.iter_mut().enumerate() {
            terms.clear();
            terms.extend(parts.iter().map(|&p| self.nodes[p.0].value.data[i]));
            terms.sort_by(f64::total_cmp);
            *o = terms.iter().sum();
        }
        Ok(self.push(y, Op::AddN(parts.to_vec())))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "sub")?;
        let y = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(y, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let y = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(y, Op::Mul(a, b)))
    }

    /// Elementwise quotient. The caller keeps denominators away from zero.
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "div")?;
        let y = self.value(a).zip_map(self.value(b), |x, y| x / y);
        Ok(self.push(y, Op::Div(a, b)))
    }

    /// `a - s` with `s` a 1×1 node broadcast over every entry of `a`.
    pub fn sub_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        if self.shape(s) != (1, 1) {
            return Err(Error::Shape("sub_scalar: subtrahend must be 1x1".into()));
        }
        let sv = self.scalar(s);
        let y = self.value(a).map(|x| x - sv);
        Ok(self.push(y, Op::SubScalar(a, s)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let y = self.value(a).map(|x| x * c);
        self.push(y, Op::Scale(a, c))
    }

    /// `a + c` elementwise.
    pub fn offset(&mut self, a: NodeId, c: f64) -> NodeId {
        let y = self.value(a).map(|x| x + c);
        self.push(y, Op::Offset(a))
    }

    /// `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let y = self.value(a).map(|x| x.max(0.0));
        self.push(y, Op::Relu(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let y = self.value(a).map(|x| x * x);
        self.push(y, Op::Square(a))
    }

    /// `|x|`; the subgradient at 0 is 0.
    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let y = self.value(a).map(f64::abs);
        self.push(y, Op::Abs(a))
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let y = self.value(a).map(f64::ln);
        self.push(y, Op::Ln(a))
    }

    /// Divides each row by `max(‖row‖, NORM_EPS)`. All-zero rows stay zero.
    pub fn l2_normalize_rows(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let mut y = x.clone();
        for r in 0..x.rows {
            let n = row_norm(x.row(r));
            for v in &mut y.data[r * x.cols..(r + 1) * x.cols] {
                *v /= n;
            }
        }
        self.push(y, Op::L2NormalizeRows(a))
    }

    /// Inner product of two equally sized nodes, as a 1×1 node.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).len() != self.value(b).len() {
            return Err(Error::Shape(format!(
                "dot: lengths {} and {}",
                self.value(a).len(),
                self.value(b).len()
            )));
        }
        let v = dot_slices(&self.value(a).data, &self.value(b).data);
        Ok(self.push(Matrix::scalar(v), Op::Dot(a, b)))
    }

    /// K×c → K×1 row sums.
    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let data = (0..x.rows).map(|r| x.row(r).iter().sum()).collect();
        let y = Matrix {
            rows: x.rows,
            cols: 1,
            data,
        };
        self.push(y, Op::RowSum(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data.iter().sum();
        self.push(Matrix::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let s = x.data.iter().sum::<f64>() / x.len() as f64;
        self.push(Matrix::scalar(s), Op::Mean(a))
    }

    /// Picks entries by flat row-major index into a 1×n row.
    pub fn gather(&mut self, a: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        let x = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= x.len()) {
            return Err(Error::Shape(format!(
                "gather index {bad} out of range for {} entries",
                x.len()
            )));
        }
        let y = Matrix::row_vector(indices.iter().map(|&i| x.data[i]).collect());
        Ok(self.push(y, Op::Gather(a, indices)))
    }

    /// Sums consecutive runs of a 1×n row: run `i` has `lens[i]` entries.
    /// Empty runs sum to zero.
    pub fn segment_sum(&mut self, a: NodeId, lens: Vec<usize>) -> Result<NodeId> {
        let x = self.value(a);
        if lens.iter().sum::<usize>() != x.len() {
            return Err(Error::Shape(format!(
                "segment lengths cover {} of {} entries",
                lens.iter().sum::<usize>(),
                x.len()
            )));
        }
        let mut out = Vec::with_capacity(lens.len());
        let mut start = 0;
        for &len in &lens {
            out.push(x.data[start..start + len].iter().sum());
            start += len;
        }
        Ok(self.push(Matrix::row_vector(out), Op::SegmentSum(a, lens)))
    }

    /// Reinterprets the contiguous range starting at `offset` as a
    /// rows×cols matrix.
    pub fn view(&mut self, a: NodeId, offset: usize, rows: usize, cols: usize) -> Result<NodeId> {
        let x = self.value(a);
        if offset + rows * cols > x.len() {
            return Err(Error::Shape(format!(
                "view of {rows}x{cols} at {offset} exceeds {} entries",
                x.len()
            )));
        }
        let y = Matrix {
            rows,
            cols,
            data: x.data[offset..offset + rows * cols].to_vec(),
        };
        Ok(self.push(y, Op::View(a, offset)))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = parts.first().map_or(0, |&p| self.shape(p).0);
        if parts.is_empty() || parts.iter().any(|&p| self.shape(p).0 != rows) {
            return Err(Error::Shape("concat_cols: row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let y = Matrix { rows, cols, data };
        Ok(self.push(y, Op::ConcatCols(parts.to_vec())))
    }

    /// K×p → K×(p+1) with a trailing constant-one column.
    pub fn append_ones(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let cols = x.cols + 1;
        let mut data = Vec::with_capacity(x.rows * cols);
        for r in 0..x.rows {
            data.extend_from_slice(x.row(r));
            data.push(1.0);
        }
        let y = Matrix {
            rows: x.rows,
            cols,
            data,
        };
        self.push(y, Op::AppendOnes(a))
    }

    /// Row-wise outer product, flattened: `y[k, i·q + j] = a[k,i]·b[k,j]`.
    pub fn row_outer(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (k, p) = self.shape(a);
        let (kb, q) = self.shape(b);
        if k != kb {
            return Err(Error::Shape(format!("row_outer: {k} vs {kb} rows")));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(k * p * q);
        for r in 0..k {
            let brow = bv.row(r);
            for &x in av.row(r) {
                data.extend(brow.iter().map(|&y| x * y));
            }
        }
        let y = Matrix {
            rows: k,
            cols: p * q,
            data,
        };
        Ok(self.push(y, Op::RowOuter(a, b)))
    }

    /// `ln(1 + Σ exp(x_i))` over every entry, evaluated with the largest
    /// exponent factored out.
    pub fn log1p_sum_exp(&mut self, a: NodeId) -> NodeId {
        let v = log1p_sum_exp(&self.value(a).data);
        self.push(Matrix::scalar(v), Op::Log1pSumExp(a))
    }

    /// Flattens and concatenates the given nodes into one 1×n row.
    pub fn stack(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Shape("stack of nothing".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(&self.value(p).data);
        }
        Ok(self.push(Matrix::row_vector(data), Op::Stack(parts.to_vec())))
    }

    /// Propagates d(root)/d(node) to every node reachable from `root`.
    /// Any gradients from a previous call are discarded.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.shape(root) != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a scalar root, got {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Matrix::scalar(1.0));
        for i in (0..=root.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            self.propagate(i, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last backward root w.r.t. `id`; zeros when `id` was
    /// unreachable.
    pub fn grad(&self, id: NodeId) -> Matrix {
        match self.grads.get(id.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shape(id);
                Matrix::zeros(r, c)
            }
        }
    }

    fn propagate(&self, i: usize, gy: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |id: NodeId| &self.nodes[id.0].value;
        let y = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                acc(grads, *x, gy.matmul_bt(val(*w)));
                acc(grads, *w, val(*x).matmul_at(gy));
                let mut gb = Matrix::zeros(1, gy.cols);
                for r in 0..gy.rows {
                    for (o, g) in gb.data.iter_mut().zip(gy.row(r)) {
                        *o += g;
                    }
                }
                acc(grads, *b, gb);
            }
            Op::MatMul(a, b) => {
                acc(grads, *a, gy.matmul_bt(val(*b)));
                acc(grads, *b, val(*a).matmul_at(gy));
            }
            Op::MatMulBt(a, b) => {
                acc(grads, *a, gy.matmul(val(*b)));
                acc(grads, *b, gy.matmul_at(val(*a)));
            }
            Op::Add(a, b) => {
                acc(grads, *a, gy.clone());
                acc(grads, *b, gy.clone());
            }
            Op::AddN(parts) => {
                for &p in parts {
                    acc(grads, p, gy.clone());
                }
            }
            Op::Sub(a, b) => {
                acc(grads, *a, gy.clone());
                acc(grads, *b, gy.map(|g| -g));
            }
            Op::Mul(a, b) => {
                acc(grads, *a, gy.zip_map(val(*b), |g, v| g * v));
                acc(grads, *b, gy.zip_map(val(*a), |g, v| g * v));
            }
            Op::Div(a, b) => {
                let bv = val(*b);
                acc(grads, *a, gy.zip_map(bv, |g, d| g / d));
                // d(a/b)/db = -(a/b)/b
                let t = y.zip_map(bv, |q, d| -q / d);
                acc(grads, *b, gy.zip_map(&t, |g, v| g * v));
            }
            Op::SubScalar(a, s) => {
                acc(grads, *a, gy.clone());
                acc(grads, *s, Matrix::scalar(-gy.data.iter().sum::<f64>()));
            }
            Op::Scale(a, c) => acc(grads, *a, gy.map(|g| g * c)),
            Op::Offset(a) => acc(grads, *a, gy.clone()),
            Op::Relu(a) => acc(
                grads,
                *a,
                gy.zip_map(val(*a), |g, x| if x > 0.0 { g } else { 0.0 }),
            ),
            Op::Square(a) => acc(grads, *a, gy.zip_map(val(*a), |g, x| 2.0 * x * g)),
            Op::Abs(a) => acc(
                grads,
                *a,
                gy.zip_map(val(*a), |g, x| {
                    if x > 0.0 {
                        g
                    } else if x < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                }),
            ),
            Op::Ln(a) => acc(grads, *a, gy.zip_map(val(*a), |g, x| g / x)),
            Op::L2NormalizeRows(a) => {
                let x = val(*a);
                let mut gx = Matrix::zeros(x.rows, x.cols);
                for r in 0..x.rows {
                    let xr = x.row(r);
                    let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let g = gy.row(r);
                    let out = &mut gx.data[r * x.cols..(r + 1) * x.cols];
                    if norm > NORM_EPS {
                        // (g - y (y·g)) / ‖x‖
                        let yr = y.row(r);
                        let yg = dot_slices(yr, g);
                        for ((o, &gv), &yv) in out.iter_mut().zip(g).zip(yr) {
                            *o = (gv - yv * yg) / norm;
                        }
                    } else {
                        for (o, &gv) in out.iter_mut().zip(g) {
                            *o = gv / NORM_EPS;
                        }
                    }
                }
                acc(grads, *a, gx);
            }
            Op::Dot(a, b) => {
                let g = gy.data[0];
                let (av, bv) = (val(*a), val(*b));
                acc(grads, *a, bv.map(|v| v * g).reshaped(av.rows, av.cols));
                acc(grads, *b, av.map(|v| v * g).reshaped(bv.rows, bv.cols));
            }
            Op::RowSum(a) => {
                let x = val(*a);
                let mut gx = Matrix::zeros(x.rows, x.cols);
                for r in 0..x.rows {
                    gx.data[r * x.cols..(r + 1) * x.cols].fill(gy.data[r]);
                }
                acc(grads, *a, gx);
            }
            Op::Sum(a) => {
                let g = gy.data[0];
                acc(grads, *a, val(*a).map(|_| g));
            }
            Op::Mean(a) => {
                let x = val(*a);
                let g = gy.data[0] / x.len() as f64;
                acc(grads, *a, x.map(|_| g));
            }
            Op::Gather(a, idx) => {
                let x = val(*a);
                let gx = grads[a.0].get_or_insert_with(|| Matrix::zeros(x.rows, x.cols));
                for (&j, &g) in idx.iter().zip(&gy.data) {
                    gx.data[j] += g;
                }
            }
            Op::View(a, offset) => {
                let x = val(*a);
                let gx = grads[a.0].get_or_insert_with(|| Matrix::zeros(x.rows, x.cols));
                for (o, &g) in gx.data[*offset..offset + gy.len()].iter_mut().zip(&gy.data) {
                    *o += g;
                }
            }
            Op::SegmentSum(a, lens) => {
                let mut gx = Vec::with_capacity(val(*a).len());
                for (&len, &g) in lens.iter().zip(&gy.data) {
                    gx.extend(std::iter::repeat_n(g, len));
                }
                let x = val(*a);
                acc(
                    grads,
                    *a,
                    Matrix {
                        rows: x.rows,
                        cols: x.cols,
                        data: gx,
                    },
                );
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let pv = val(p);
                    let mut gp = Matrix::zeros(pv.rows, pv.cols);
                    for r in 0..pv.rows {
                        gp.data[r * pv.cols..(r + 1) * pv.cols]
                            .copy_from_slice(&gy.row(r)[start..start + pv.cols]);
                    }
                    start += pv.cols;
                    acc(grads, p, gp);
                }
            }
            Op::AppendOnes(a) => {
                let x = val(*a);
                let mut gx = Matrix::zeros(x.rows, x.cols);
                for r in 0..x.rows {
                    gx.data[r * x.cols..(r + 1) * x.cols].copy_from_slice(&gy.row(r)[..x.cols]);
                }
                acc(grads, *a, gx);
            }
            Op::RowOuter(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (p, q) = (av.cols, bv.cols);
                let mut ga = Matrix::zeros(av.rows, p);
                let mut gb = Matrix::zeros(bv.rows, q);
                for r in 0..av.rows {
                    let grow = gy.row(r);
                    let arow = av.row(r);
                    let brow = bv.row(r);
                    for i in 0..p {
                        let gblock = &grow[i * q..(i + 1) * q];
                        ga.data[r * p + i] = dot_slices(gblock, brow);
                        let ai = arow[i];
                        for (o, &g) in gb.data[r * q..(r + 1) * q].iter_mut().zip(gblock) {
                            *o += g * ai;
                        }
                    }
                }
                acc(grads, *a, ga);
                acc(grads, *b, gb);
            }
            Op::Log1pSumExp(a) => {
                let g = gy.data[0];
                let out = y.data[0];
                acc(grads, *a, val(*a).map(|x| g * (x - out).exp()));
            }
            Op::Stack(parts) => {
                let mut start = 0;
                for &p in parts {
                    let pv = val(p);
                    let gp = Matrix {
                        rows: pv.rows,
                        cols: pv.cols,
                        data: gy.data[start..start + pv.len()].to_vec(),
                    };
                    start += pv.len();
                    acc(grads, p, gp);
                }
            }
        }
    }
}

fn acc(grads: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

impl Matrix {
    fn reshaped(mut self, rows: usize, cols: usize) -> Matrix {
        self.rows = rows;
        self.cols = cols;
        self
    }
}

fn row_norm(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS)
}

/// `ln(1 + Σ exp(x_i))`, stable for large exponents.
pub fn log1p_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(0.0_f64, f64::max);
    if m == 0.0 {
        return xs.iter().map(|&x| x.exp()).sum::<f64>().ln_1p();
    }
    let s = (-m).exp() + xs.iter().map(|&x| (x - m).exp()).sum::<f64>();
    m + s.ln()
}
