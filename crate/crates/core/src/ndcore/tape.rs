//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] is an append-only arena: every operation pushes a node whose
//! parents already exist, so node order is a topological order and the
//! backward sweep is a single reverse pass. Values are always two
//! dimensional; scalars are `1 x 1`.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // std float methods shadow these in test builds
use num_traits::Float;

use super::linalg::{self, Mat};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    MulScalar(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Exp(usize),
    Ln(usize),
    Tanh(usize),
    Sigmoid(usize),
    Softplus(usize),
    Square(usize),
    Sqrt(usize),
    Clamp(usize, f64, f64),
    CbLogNorm(usize),
    Sum(usize),
    SumRows(usize),
    SliceCols(usize, usize),
    SqDist(usize, usize),
    Cholesky(usize),
    SolveLower(usize, usize),
    SolveLowerT(usize, usize),
    Diag(usize),
    LowerFromRaw(usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MulScalar(..) => "mul_scalar",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softplus(..) => "softplus",
            Op::Square(..) => "square",
            Op::Sqrt(..) => "sqrt",
            Op::Clamp(..) => "clamp",
            Op::CbLogNorm(..) => "cb_log_norm",
            Op::Sum(..) => "sum",
            Op::SumRows(..) => "sum_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::SqDist(..) => "sq_dist",
            Op::Cholesky(..) => "cholesky",
            Op::SolveLower(..) => "solve_lower",
            Op::SolveLowerT(..) => "solve_lower_t",
            Op::Diag(..) => "diag",
            Op::LowerFromRaw(..) => "lower_from_raw",
        }
    }

    fn parents(&self) -> [Option<usize>; 2] {
        match *self {
            Op::Leaf => [None, None],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MulScalar(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b)
            | Op::MatMul(a, b)
            | Op::SqDist(a, b)
            | Op::SolveLower(a, b)
            | Op::SolveLowerT(a, b) => [Some(a), Some(b)],
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Transpose(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::Clamp(a, ..)
            | Op::CbLogNorm(a)
            | Op::Sum(a)
            | Op::SumRows(a)
            | Op::SliceCols(a, _)
            | Op::Cholesky(a)
            | Op::Diag(a)
            | Op::LowerFromRaw(a) => [Some(a), None],
        }
    }
}

struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

/// Computation graph for one objective evaluation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    nonfinite: Option<(&'static str, usize)>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Copies the gradient of `v` into `tensor`, or zeros when `v` did not
    /// influence the root.
    pub fn write_to(&self, v: Var, tensor: &mut Tensor) -> Result<()> {
        let g = match self.get(v) {
            Some(g) => g.data().to_vec(),
            None => vec![0.0; tensor.len()],
        };
        tensor.set_grad(g)
    }
}

/// `ln(l / tanh(l / 2))`: log-normalizer of the continuous Bernoulli written in
/// terms of its logit `l`.
pub fn cb_log_norm(l: f64) -> f64 {
    let a = l.abs();
    if a < 1e-2 {
        let x2 = 0.25 * l * l;
        core::f64::consts::LN_2 + (x2 / 3.0 - x2 * x2 / 45.0 + 2.0 * x2 * x2 * x2 / 945.0).ln_1p()
    } else {
        a.ln() - (0.5 * a).tanh().ln()
    }
}

/// Derivative of [`cb_log_norm`]: `1/l - 1/sinh(l)`.
pub fn cb_log_norm_grad(l: f64) -> f64 {
    if l.abs() < 1e-2 {
        let l2 = l * l;
        l / 6.0 - 7.0 * l * l2 / 360.0 + 31.0 * l * l2 * l2 / 15120.0
    } else {
        1.0 / l - 1.0 / l.sinh()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Column sums of `m` as a `1 x cols` row.
fn col_sums(m: &Mat) -> Mat {
    let mut out = Mat::zeros(1, m.cols());
    for i in 0..m.rows() {
        linalg::axpy(1.0, m.row_slice(i), out.data_mut());
    }
    out
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

    fn push(&mut self, value: Mat, op: Op) -> Var {
        let requires_grad = op
            .parents()
            .iter()
            .flatten()
            .any(|&p| self.nodes[p].requires_grad);
        let idx = self.nodes.len();
        if self.nonfinite.is_none() && !value.is_finite() {
            self.nonfinite = Some((op.name(), idx));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(idx)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Mat, requires_grad: bool) -> Var {
        let idx = self.nodes.len();
        if self.nonfinite.is_none() && !value.is_finite() {
            self.nonfinite = Some(("leaf", idx));
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(idx)
    }

    /// Registers a parameter tensor as a differentiable leaf.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.leaf(t.to_mat(), true)
    }

    pub fn scalar_constant(&mut self, v: f64) -> Var {
        self.constant(Mat::scalar(v))
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    /// Fails if any node so far holds a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        match self.nonfinite {
            Some((op, node)) => Err(Error::NonFinite { op, node }),
            None => Ok(()),
        }
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) {
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "{op}: operand shapes differ"
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a.0, b.0))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| -x);
        self.push(v, Op::Neg(a.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale(a.0, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a.0))
    }

    /// `a * s` for a `1 x 1` node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.value(s).shape(), (1, 1), "mul_scalar: s must be 1x1");
        let c = self.scalar(s);
        let v = self.value(a).scale(c);
        self.push(v, Op::MulScalar(a.0, s.0))
    }

    /// Adds the `1 x cols` row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let (rows, cols) = self.value(a).shape();
        assert_eq!(self.value(r).shape(), (1, cols), "add_row: row shape");
        let rv = self.value(r).data();
        let mut v = self.value(a).clone();
        for i in 0..rows {
            linalg::axpy(1.0, rv, v.row_slice_mut(i));
        }
        self.push(v, Op::AddRow(a.0, r.0))
    }

    /// Multiplies every row of `a` elementwise by the `1 x cols` row `r`.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Var {
        let (rows, cols) = self.value(a).shape();
        assert_eq!(self.value(r).shape(), (1, cols), "mul_row: row shape");
        let rv = self.value(r).data().to_vec();
        let mut v = self.value(a).clone();
        for i in 0..rows {
            for (x, s) in v.row_slice_mut(i).iter_mut().zip(&rv) {
                *x *= s;
            }
        }
        self.push(v, Op::MulRow(a.0, r.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a.0, b.0))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.exp());
        self.push(v, Op::Exp(a.0))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.ln());
        self.push(v, Op::Ln(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.tanh());
        self.push(v, Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a.0))
    }

    /// Numerically stable `ln(1 + e^x)`.
    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a.0))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.sqrt());
        self.push(v, Op::Sqrt(a.0))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.max(lo).min(hi));
        self.push(v, Op::Clamp(a.0, lo, hi))
    }

    /// Elementwise [`cb_log_norm`] of logits.
    pub fn cb_log_norm(&mut self, a: Var) -> Var {
        let v = self.value(a).map(cb_log_norm);
        self.push(v, Op::CbLogNorm(a.0))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Mat::scalar(s), Op::Sum(a.0))
    }

    /// Sums over rows, producing a `1 x cols` row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let v = col_sums(self.value(a));
        self.push(v, Op::SumRows(a.0))
    }

    /// Columns `start..start + width` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let m = self.value(a);
        assert!(start + width <= m.cols(), "slice_cols: out of range");
        let v = Mat::from_fn(m.rows(), width, |i, j| m[(i, start + j)]);
        self.push(v, Op::SliceCols(a.0, start))
    }

    /// Pairwise squared Euclidean distances between the rows of `a` and `b`.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(am.cols(), bm.cols(), "sq_dist: column counts differ");
        let v = Mat::from_fn(am.rows(), bm.rows(), |i, j| {
            am.row_slice(i)
                .iter()
                .zip(bm.row_slice(j))
                .map(|(x, y)| (x - y) * (x - y))
                .sum()
        });
        self.push(v, Op::SqDist(a.0, b.0))
    }

    /// Lower Cholesky factor with the jitter ladder of [`linalg::cholesky`].
    pub fn cholesky(&mut self, a: Var) -> Result<Var> {
        let l = linalg::cholesky(self.value(a))?;
        Ok(self.push(l, Op::Cholesky(a.0)))
    }

    /// `l⁻¹ b` for lower-triangular `l`.
    pub fn solve_lower(&mut self, l: Var, b: Var) -> Var {
        let v = linalg::solve_lower(self.value(l), self.value(b));
        self.push(v, Op::SolveLower(l.0, b.0))
    }

    /// `l⁻ᵀ b` for lower-triangular `l`.
    pub fn solve_lower_t(&mut self, l: Var, b: Var) -> Var {
        let v = linalg::solve_lower_transpose(self.value(l), self.value(b));
        self.push(v, Op::SolveLowerT(l.0, b.0))
    }

    /// Diagonal of a square matrix as a column.
    pub fn diag(&mut self, a: Var) -> Var {
        let m = self.value(a);
        assert_eq!(m.rows(), m.cols(), "diag: matrix must be square");
        let v = Mat::column(&m.diag());
        self.push(v, Op::Diag(a.0))
    }

    /// Lower-triangular matrix whose strict lower part is taken from `raw`
    /// and whose diagonal is `exp(diag(raw))`.
    pub fn lower_from_raw(&mut self, raw: Var) -> Var {
        let m = self.value(raw);
        assert_eq!(m.rows(), m.cols(), "lower_from_raw: matrix must be square");
        let v = Mat::from_fn(m.rows(), m.cols(), |i, j| match j.cmp(&i) {
            core::cmp::Ordering::Less => m[(i, j)],
            core::cmp::Ordering::Equal => m[(i, i)].exp(),
            core::cmp::Ordering::Greater => 0.0,
        });
        self.push(v, Op::LowerFromRaw(raw.0))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        self.check_finite()?;
        let (rows, cols) = self.value(root).shape();
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarRoot { rows, cols });
        }
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[root.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[root.0] = Some(Mat::scalar(1.0));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            for p in node.op.parents().iter().flatten() {
                if *p >= i {
                    return Err(Error::GraphCycle { node: i });
                }
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    fn propagate(&self, i: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let val = |k: usize| &self.nodes[k].value;
        let mut acc = |k: usize, contrib: Mat| {
            if !self.nodes[k].requires_grad {
                return;
            }
            match &mut grads[k] {
                Some(existing) => existing.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };

        match node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(a, g.clone());
                acc(b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(a, g.clone());
                acc(b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if self.wants(a) {
                    acc(a, g.zip_map(val(b), |gi, bi| gi * bi));
                }
                if self.wants(b) {
                    acc(b, g.zip_map(val(a), |gi, ai| gi * ai));
                }
            }
            Op::Neg(a) => acc(a, g.scale(-1.0)),
            Op::Scale(a, c) => acc(a, g.scale(c)),
            Op::AddScalar(a) => acc(a, g.clone()),
            Op::MulScalar(a, s) => {
                let c = val(s).data()[0];
                if self.wants(a) {
                    acc(a, g.scale(c));
                }
                if self.wants(s) {
                    acc(s, Mat::scalar(linalg::dot(g.data(), val(a).data())));
                }
            }
            Op::AddRow(a, r) => {
                acc(a, g.clone());
                if self.wants(r) {
                    acc(r, col_sums(g));
                }
            }
            Op::MulRow(a, r) => {
                let rv = val(r).data();
                if self.wants(a) {
                    let mut ga = g.clone();
                    for k in 0..ga.rows() {
                        for (x, s) in ga.row_slice_mut(k).iter_mut().zip(rv) {
                            *x *= s;
                        }
                    }
                    acc(a, ga);
                }
                if self.wants(r) {
                    acc(r, col_sums(&g.zip_map(val(a), |gi, ai| gi * ai)));
                }
            }
            Op::MatMul(a, b) => {
                if self.wants(a) {
                    acc(a, g.matmul_nt(val(b)));
                }
                if self.wants(b) {
                    acc(b, val(a).matmul_tn(g));
                }
            }
            Op::Transpose(a) => acc(a, g.transpose()),
            Op::Exp(a) => acc(a, g.zip_map(y, |gi, yi| gi * yi)),
            Op::Ln(a) => acc(a, g.zip_map(val(a), |gi, xi| gi / xi)),
            Op::Tanh(a) => acc(a, g.zip_map(y, |gi, yi| gi * (1.0 - yi * yi))),
            Op::Sigmoid(a) => acc(a, g.zip_map(y, |gi, yi| gi * yi * (1.0 - yi))),
            Op::Softplus(a) => acc(a, g.zip_map(val(a), |gi, xi| gi * sigmoid(xi))),
            Op::Square(a) => acc(a, g.zip_map(val(a), |gi, xi| 2.0 * gi * xi)),
            Op::Sqrt(a) => acc(a, g.zip_map(y, |gi, yi| 0.5 * gi / yi)),
            Op::Clamp(a, lo, hi) => acc(
                a,
                g.zip_map(val(a), |gi, xi| if xi >= lo && xi <= hi { gi } else { 0.0 }),
            ),
            Op::CbLogNorm(a) => acc(a, g.zip_map(val(a), |gi, xi| gi * cb_log_norm_grad(xi))),
            Op::Sum(a) => {
                let (r, c) = val(a).shape();
                acc(a, Mat::filled(r, c, g.data()[0]));
            }
            Op::SumRows(a) => {
                let (r, c) = val(a).shape();
                let gr = g.data();
                acc(a, Mat::from_fn(r, c, |_, j| gr[j]));
            }
            Op::SliceCols(a, start) => {
                let (r, c) = val(a).shape();
                let w = g.cols();
                acc(
                    a,
                    Mat::from_fn(r, c, |i, j| {
                        if j >= start && j < start + w {
                            g[(i, j - start)]
                        } else {
                            0.0
                        }
                    }),
                );
            }
            Op::SqDist(a, b) => {
                let (am, bm) = (val(a), val(b));
                let d = am.cols();
                if self.wants(a) {
                    let mut ga = Mat::zeros(am.rows(), d);
                    for p in 0..am.rows() {
                        let ar = am.row_slice(p);
                        for q in 0..bm.rows() {
                            let w = 2.0 * g[(p, q)];
                            if w == 0.0 {
                                continue;
                            }
                            let br = bm.row_slice(q);
                            let out = ga.row_slice_mut(p);
                            for k in 0..d {
                                out[k] += w * (ar[k] - br[k]);
                            }
                        }
                    }
                    acc(a, ga);
                }
                if self.wants(b) {
                    let mut gb = Mat::zeros(bm.rows(), d);
                    for p in 0..am.rows() {
                        let ar = am.row_slice(p);
                        for q in 0..bm.rows() {
                            let w = 2.0 * g[(p, q)];
                            if w == 0.0 {
                                continue;
                            }
                            let br = bm.row_slice(q);
                            let out = gb.row_slice_mut(q);
                            for k in 0..d {
                                out[k] -= w * (ar[k] - br[k]);
                            }
                        }
                    }
                    acc(b, gb);
                }
            }
            Op::Cholesky(a) => {
                // Ā = sym(L⁻ᵀ Φ(Lᵀ L̄) L⁻¹), Φ = lower triangle with halved diagonal.
                let l = y;
                let mut p = l.matmul_tn(g).lower_triangle();
                for k in 0..p.rows() {
                    p[(k, k)] *= 0.5;
                }
                let left = linalg::solve_lower_transpose(l, &p);
                let s = linalg::solve_lower_transpose(l, &left.transpose()).transpose();
                let st = s.transpose();
                acc(a, s.zip_map(&st, |x, y| 0.5 * (x + y)));
            }
            Op::SolveLower(l, b) => {
                let gb = linalg::solve_lower_transpose(val(l), g);
                if self.wants(l) {
                    acc(l, gb.matmul_nt(y).lower_triangle().scale(-1.0));
                }
                acc(b, gb);
            }
            Op::SolveLowerT(l, b) => {
                let gb = linalg::solve_lower(val(l), g);
                if self.wants(l) {
                    acc(l, y.matmul_nt(&gb).lower_triangle().scale(-1.0));
                }
                acc(b, gb);
            }
            Op::Diag(a) => {
                let n = val(a).rows();
                let mut ga = Mat::zeros(n, n);
                for k in 0..n {
                    ga[(k, k)] = g.data()[k];
                }
                acc(a, ga);
            }
            Op::LowerFromRaw(a) => {
                let n = y.rows();
                acc(
                    a,
                    Mat::from_fn(n, n, |r, c| match c.cmp(&r) {
                        core::cmp::Ordering::Less => g[(r, c)],
                        core::cmp::Ordering::Equal => g[(r, r)] * y[(r, r)],
                        core::cmp::Ordering::Greater => 0.0,
                    }),
                );
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let w = g.leaf(Mat::column(&[1.0, 2.0, 3.0]), true);
        let ww = g.mul(w, w);
        let root = g.sum(ww);
        let grads = g.backward(root).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn constant_root_is_noop() {
        let mut g = Graph::new();
        let c = g.constant(Mat::scalar(3.0));
        let root = g.scale(c, 2.0);
        let grads = g.backward(root).unwrap();
        assert!(grads.get(c).is_none());
        assert!(grads.get(root).is_none());
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::new();
        let w = g.leaf(Mat::column(&[1.0, 2.0]), true);
        assert!(matches!(
            g.backward(w),
            Err(Error::NonScalarRoot { rows: 2, cols: 1 })
        ));
    }

    #[test]
    fn non_finite_values_poison_the_graph() {
        let mut g = Graph::new();
        let w = g.leaf(Mat::column(&[-1.0]), true);
        let l = g.ln(w);
        let root = g.sum(l);
        assert!(matches!(g.check_finite(), Err(Error::NonFinite { op: "ln", .. })));
        assert!(g.backward(root).is_err());
    }

    #[test]
    fn cb_normalizer_is_log_two_at_zero_logit() {
        assert!((cb_log_norm(0.0) - core::f64::consts::LN_2).abs() < 1e-15);
        // Both branches meet at the series cutoff.
        let below = cb_log_norm(0.00999999);
        let above = cb_log_norm(0.01000001);
        assert!((below - above).abs() < 1e-9);
        let gb = cb_log_norm_grad(0.00999999);
        let ga = cb_log_norm_grad(0.01000001);
        // slope near the cutoff is about 1/6 over a 2e-8 gap
        assert!((gb - ga).abs() < 1e-8);
    }
}
