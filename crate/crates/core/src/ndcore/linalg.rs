//! Dense row-major matrices and the factorizations the models lean on.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

#[allow(unused_imports)] // std float methods shadow these in test builds
use num_traits::Float;

use crate::error::{Error, Result};

/// Diagonal jitter tried in order until a Cholesky factorization succeeds.
pub const JITTER_LADDER: [f64; 8] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// A dense row-major `f64` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Wraps row-major `data`.
    ///
    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "Mat::from_vec: {rows}x{cols} needs {} values",
            rows * cols
        );
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Stacks equally long rows. An empty slice yields a `0 x 0` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "Mat::from_rows: ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn column(values: &[f64]) -> Self {
        Self::from_vec(values.len(), 1, values.to_vec())
    }

    pub fn row(values: &[f64]) -> Self {
        Self::from_vec(1, values.len(), values.to_vec())
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_vec(1, 1, vec![value])
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row_slice(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_slice_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col_vec(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Mat {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row_slice(i));
        }
        Mat::from_vec(idx.len(), self.cols, data)
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// `self * rhs`
    pub fn matmul(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.cols, rhs.rows, "matmul: inner dimensions differ");
        let mut out = Mat::zeros(self.rows, rhs.cols);
        let n = rhs.cols;
        for i in 0..self.rows {
            let a = self.row_slice(i);
            let (lo, hi) = nonzero_span(a);
            axpy_many(&a[lo..hi], |t| rhs.row_slice(lo + t), &mut out.data[i * n..(i + 1) * n]);
        }
        out
    }

    /// `selfᵀ * rhs` without materializing the transpose.
    pub fn matmul_tn(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.rows, rhs.rows, "matmul_tn: row counts differ");
        let mut out = Mat::zeros(self.cols, rhs.cols);
        let n = rhs.cols;
        let mut col = vec![0.0; self.rows];
        for i in 0..self.cols {
            for (k, c) in col.iter_mut().enumerate() {
                *c = self.data[k * self.cols + i];
            }
            let (lo, hi) = nonzero_span(&col);
            axpy_many(&col[lo..hi], |t| rhs.row_slice(lo + t), &mut out.data[i * n..(i + 1) * n]);
        }
        out
    }

    /// `self * rhsᵀ`
    pub fn matmul_nt(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.cols, rhs.cols, "matmul_nt: column counts differ");
        self.matmul(&rhs.transpose())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
        assert_eq!(self.shape(), other.shape(), "zip_map: shapes differ");
        Mat {
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

    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!(self.shape(), other.shape(), "add_assign: shapes differ");
        axpy(1.0, &other.data, &mut self.data);
    }

    pub fn scale(&self, c: f64) -> Mat {
        self.map(|v| v * c)
    }

    pub fn add_diag(&mut self, c: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += c;
        }
    }

    /// Keeps the lower triangle (diagonal included) and zeroes the rest.
    pub fn lower_triangle(&self) -> Mat {
        Mat::from_fn(self.rows, self.cols, |i, j| if j <= i { self[(i, j)] } else { 0.0 })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn frobenius_sq(&self) -> f64 {
        dot(&self.data, &self.data)
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = c * 4;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in chunks * 4..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// `y += a * x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `y += Σₜ c[t] · row(t)`, four rows per pass over `y`.
#[inline]
fn axpy_many<'a>(c: &[f64], row: impl Fn(usize) -> &'a [f64], y: &mut [f64]) {
    let len = y.len();
    let mut t = 0;
    while t + 4 <= c.len() {
        let (c0, c1, c2, c3) = (c[t], c[t + 1], c[t + 2], c[t + 3]);
        let (r0, r1, r2, r3) = (&row(t)[..len], &row(t + 1)[..len], &row(t + 2)[..len], &row(t + 3)[..len]);
        for j in 0..len {
            y[j] += c0 * r0[j] + c1 * r1[j] + c2 * r2[j] + c3 * r3[j];
        }
        t += 4;
    }
    while t < c.len() {
        axpy(c[t], row(t), y);
        t += 1;
    }
}

/// Index range holding every nonzero of `v`.
fn nonzero_span(v: &[f64]) -> (usize, usize) {
    match v.iter().position(|x| *x != 0.0) {
        None => (0, 0),
        Some(lo) => (lo, v.iter().rposition(|x| *x != 0.0).expect("has a nonzero") + 1),
    }
}

fn try_cholesky(a: &Mat, jitter: f64) -> Option<Mat> {
    let n = a.rows;
    let mut l = Mat::zeros(n, n);
    for i in 0..n {
        let (upper, lower) = l.data.split_at_mut(i * n);
        let li = &mut lower[..n];
        for j in 0..i {
            let lj = &upper[j * n..(j + 1) * n];
            let v = (a[(i, j)] - dot(&li[..j], &lj[..j])) / lj[j];
            if !v.is_finite() {
                return None;
            }
            li[j] = v;
        }
        let d = a[(i, i)] + jitter - dot(&li[..i], &li[..i]);
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        li[i] = d.sqrt();
    }
    Some(l)
}

/// Lower Cholesky factor of the symmetric matrix `a`, reading its lower
/// triangle. Returns the factor together with the jitter that was needed.
pub fn cholesky_with_jitter(a: &Mat) -> Result<(Mat, f64)> {
    assert_eq!(a.rows, a.cols, "cholesky: matrix must be square");
    for (attempt, &jitter) in JITTER_LADDER.iter().enumerate() {
        if let Some(l) = try_cholesky(a, jitter) {
            if attempt > 0 {
                log::debug!("cholesky needed jitter {jitter:e} (n = {})", a.rows);
            }
            return Ok((l, jitter));
        }
    }
    Err(Error::Cholesky {
        ladder: JITTER_LADDER.to_vec(),
    })
}

pub fn cholesky(a: &Mat) -> Result<Mat> {
    cholesky_with_jitter(a).map(|(l, _)| l)
}

/// Lower-triangular `l` with `lᵀ l = a` (the reversed-order factorization).
pub fn reverse_cholesky(a: &Mat) -> Result<Mat> {
    let n = a.rows;
    let flipped = Mat::from_fn(n, n, |i, j| a[(n - 1 - i, n - 1 - j)]);
    let lp = cholesky(&flipped)?;
    // P lp P is upper triangular with (P lp P)(P lp P)ᵀ = a.
    Ok(Mat::from_fn(n, n, |i, j| lp[(n - 1 - j, n - 1 - i)]))
}

/// Solves `l x = b` for lower-triangular `l`.
pub fn solve_lower(l: &Mat, b: &Mat) -> Mat {
    assert_eq!(l.rows, b.rows, "solve_lower: row counts differ");
    let n = l.rows;
    let k = b.cols;
    let mut x = b.clone();
    let mut coef = Vec::with_capacity(n);
    for i in 0..n {
        let (done, rest) = x.data.split_at_mut(i * k);
        let xi = &mut rest[..k];
        let lrow = l.row_slice(i);
        coef.clear();
        coef.extend(lrow[..i].iter().map(|v| -v));
        let done: &[f64] = done;
        axpy_many(&coef, |j| &done[j * k..(j + 1) * k], xi);
        let inv = 1.0 / lrow[i];
        for v in xi.iter_mut() {
            *v *= inv;
        }
    }
    x
}

/// Solves `lᵀ x = b` for lower-triangular `l`.
pub fn solve_lower_transpose(l: &Mat, b: &Mat) -> Mat {
    assert_eq!(l.rows, b.rows, "solve_lower_transpose: row counts differ");
    let n = l.rows;
    let k = b.cols;
    let mut x = b.clone();
    let mut coef = Vec::with_capacity(n);
    for i in (0..n).rev() {
        let (head, solved) = x.data.split_at_mut((i + 1) * k);
        let xi = &mut head[i * k..];
        coef.clear();
        coef.extend((i + 1..n).map(|j| -l[(j, i)]));
        let solved: &[f64] = solved;
        axpy_many(&coef, |t| &solved[t * k..(t + 1) * k], xi);
        let inv = 1.0 / l[(i, i)];
        for v in xi.iter_mut() {
            *v *= inv;
        }
    }
    x
}

/// `a⁻¹ b` for symmetric positive definite `a` given its lower factor.
pub fn cholesky_solve(l: &Mat, b: &Mat) -> Mat {
    solve_lower_transpose(l, &solve_lower(l, b))
}

pub fn log_det_from_cholesky(l: &Mat) -> f64 {
    2.0 * l.diag().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn inverse_spd(a: &Mat) -> Result<Mat> {
    let l = cholesky(a)?;
    Ok(cholesky_solve(&l, &Mat::identity(a.rows)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_of_identity_is_identity() {
        let l = cholesky(&Mat::identity(5)).unwrap();
        assert_eq!(l, Mat::identity(5));
    }

    #[test]
    fn cholesky_two_by_two() {
        let a = Mat::from_vec(2, 2, vec![4.0, 2.0, 2.0, 3.0]);
        let (l, jitter) = cholesky_with_jitter(&a).unwrap();
        assert_eq!(jitter, 0.0);
        assert!((l[(0, 0)] - 2.0).abs() < 1e-15);
        assert!((l[(1, 0)] - 1.0).abs() < 1e-15);
        assert!((l[(1, 1)] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(l[(0, 1)], 0.0);
    }

    #[test]
    fn rank_deficient_needs_jitter() {
        let a = Mat::from_vec(2, 2, vec![1.0, 1.0, 1.0, 1.0]);
        let (l, jitter) = cholesky_with_jitter(&a).unwrap();
        assert!(jitter > 0.0);
        let back = l.matmul_nt(&l);
        assert!(back.max_abs_diff(&a) < 1e-4);
        assert!(back.max_abs_diff(&a) <= jitter + 1e-10);
    }

    #[test]
    fn failure_reports_ladder() {
        let a = Mat::from_vec(2, 2, vec![-1.0, 0.0, 0.0, 1.0]);
        match cholesky(&a) {
            Err(Error::Cholesky { ladder }) => assert_eq!(ladder, JITTER_LADDER.to_vec()),
            other => panic!("expected cholesky failure, got {other:?}"),
        }
    }

    #[test]
    fn triangular_solves_invert() {
        let a = Mat::from_vec(3, 3, vec![4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let l = cholesky(&a).unwrap();
        let b = Mat::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let x = solve_lower(&l, &b);
        assert!(l.matmul(&x).max_abs_diff(&b) < 1e-12);
        let y = solve_lower_transpose(&l, &b);
        assert!(l.transpose().matmul(&y).max_abs_diff(&b) < 1e-12);
        let z = cholesky_solve(&l, &b);
        assert!(a.matmul(&z).max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn reverse_factor_satisfies_lt_l() {
        let a = Mat::from_vec(3, 3, vec![4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let l = reverse_cholesky(&a).unwrap();
        for i in 0..3 {
            for j in i + 1..3 {
                assert_eq!(l[(i, j)], 0.0);
            }
        }
        assert!(l.matmul_tn(&l).max_abs_diff(&a) < 1e-12);
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Mat::from_fn(3, 4, |i, j| (i * 4 + j) as f64 * 0.3 - 1.0);
        let b = Mat::from_fn(4, 2, |i, j| (i + 2 * j) as f64 * 0.7);
        let c = a.matmul(&b);
        assert!(a.transpose().matmul_tn(&b).max_abs_diff(&c) < 1e-12);
        assert!(a.matmul_nt(&b.transpose()).max_abs_diff(&c) < 1e-12);
    }
}
