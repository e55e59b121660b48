#![allow(dead_code)]

use lsbo_core::ndcore::{Mat, Tensor};
use nalgebra::{DMatrix, DVector};

pub const FD_STEP: f64 = 1e-5;

/// Central differences of `f` with respect to every entry of every tensor
/// returned by `params`.
pub fn numeric_gradients<M: Clone>(
    model: &M,
    params: impl Fn(&mut M) -> Vec<&mut Tensor>,
    f: impl Fn(&M) -> f64,
) -> Vec<Vec<f64>> {
    let mut probe = model.clone();
    let shapes: Vec<usize> = params(&mut probe).iter().map(|t| t.len()).collect();
    let mut out = Vec::new();
    for (p, &len) in shapes.iter().enumerate() {
        let mut g = vec![0.0; len];
        for (k, slot) in g.iter_mut().enumerate() {
            let mut plus = model.clone();
            params(&mut plus)[p].data_mut()[k] += FD_STEP;
            let mut minus = model.clone();
            params(&mut minus)[p].data_mut()[k] -= FD_STEP;
            *slot = (f(&plus) - f(&minus)) / (2.0 * FD_STEP);
        }
        out.push(g);
    }
    out
}

/// Worst `|a − n| / max(|a|, |n|, floor)` over all entries.
pub fn worst_relative_error(analytic: &[Vec<f64>], numeric: &[Vec<f64>], floor: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        assert_eq!(a.len(), n.len());
        for (x, y) in a.iter().zip(n) {
            let e = (x - y).abs() / x.abs().max(y.abs()).max(floor);
            worst = worst.max(e);
        }
    }
    worst
}

pub fn to_na(m: &Mat) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

/// Squared-exponential ARD Gram matrix, written out independently.
pub fn se_gram(a: &Mat, b: &Mat, variance: f64, ls: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(a.rows(), b.rows(), |i, j| {
        let mut r2 = 0.0;
        for q in 0..ls.len() {
            let t = (a[(i, q)] - b[(j, q)]) / ls[q];
            r2 += t * t;
        }
        variance * (-0.5 * r2).exp()
    })
}

pub struct ExactGp {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub log_marginal: f64,
}

/// Exact GP regression with zero prior mean.
pub fn exact_gp(x: &Mat, y: &[f64], xs: &Mat, variance: f64, ls: &[f64], noise: f64) -> ExactGp {
    let n = x.rows();
    let k = se_gram(x, x, variance, ls) + DMatrix::identity(n, n) * noise;
    let chol = k.clone().cholesky().expect("exact gp cholesky");
    let yv = DVector::from_column_slice(y);
    let alpha = chol.solve(&yv);
    let ks = se_gram(x, xs, variance, ls);
    let mean = ks.transpose() * &alpha;
    let v = chol.l().solve_lower_triangular(&ks).unwrap();
    let var: Vec<f64> = (0..xs.rows())
        .map(|j| variance - v.column(j).norm_squared())
        .collect();
    let logdet: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let log_marginal =
        -0.5 * yv.dot(&alpha) - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    ExactGp {
        mean: mean.as_slice().to_vec(),
        var,
        log_marginal,
    }
}
