//! Result normalization, aggregation over seeds and the round-trip distance
//! map over a latent plane.

use alloc::vec::Vec;

#[allow(unused_imports)] // std float methods shadow these in test builds
use num_traits::Float;

use crate::bounds::nearest_rank_percentile;
use crate::error::{Error, Result};
use crate::ndcore::linalg::inverse_spd;
use crate::ndcore::Mat;
use crate::vae::VaeModel;

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// `(y − min(train)) / std(train)`: the best training value maps to 0 and
/// the training spread to 1.
pub fn normalize(y: &[f64], train: &[f64]) -> Result<Vec<f64>> {
    if train.is_empty() {
        return Err(Error::InsufficientData("no training values".into()));
    }
    let sd = std_dev(train);
    if !(sd > 0.0) {
        return Err(Error::ZeroSpread);
    }
    let min = train.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(y.iter().map(|v| (v - min) / sd).collect())
}

/// Per-iteration mean, standard error of the mean and raw values over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct RegretCurve {
    pub mean: Vec<f64>,
    pub sem: Vec<f64>,
    /// `raw[s][t]`: seed `s` at iteration `t`.
    pub raw: Vec<Vec<f64>>,
}

impl RegretCurve {
    /// Aggregates equal-length traces. The standard error uses the sample
    /// standard deviation over seeds divided by `√seeds` (zero for one seed).
    pub fn from_runs(raw: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = raw.first() else {
            return Err(Error::InsufficientData("no runs to aggregate".into()));
        };
        let len = first.len();
        if let Some(bad) = raw.iter().find(|r| r.len() != len) {
            return Err(Error::DimensionMismatch {
                context: "regret curve length",
                expected: len,
                got: bad.len(),
            });
        }
        let s = raw.len() as f64;
        let mut mean = Vec::with_capacity(len);
        let mut sem = Vec::with_capacity(len);
        for t in 0..len {
            let m = raw.iter().map(|r| r[t]).sum::<f64>() / s;
            let e = if raw.len() > 1 {
                let var = raw.iter().map(|r| (r[t] - m) * (r[t] - m)).sum::<f64>() / (s - 1.0);
                (var / s).sqrt()
            } else {
                0.0
            };
            mean.push(m);
            sem.push(e);
        }
        Ok(Self { mean, sem, raw })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn final_mean(&self) -> Option<f64> {
        self.mean.last().copied()
    }
}

/// Gaussian fitted to 2-d points with the Mahalanobis radius that contains a
/// given percentile of them.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianContour {
    pub mean: [f64; 2],
    pub precision: Mat,
    pub radius_sq: f64,
}

impl GaussianContour {
    pub fn fit(points: &Mat, percentile: f64) -> Result<Self> {
        if points.cols() != 2 {
            return Err(Error::DimensionMismatch {
                context: "contour points",
                expected: 2,
                got: points.cols(),
            });
        }
        if points.rows() < 3 {
            return Err(Error::InsufficientData("contour needs at least 3 points".into()));
        }
        let n = points.rows() as f64;
        let mean = [
            points.col_vec(0).iter().sum::<f64>() / n,
            points.col_vec(1).iter().sum::<f64>() / n,
        ];
        let c = Mat::from_fn(points.rows(), 2, |i, j| points[(i, j)] - mean[j]);
        let cov = c.matmul_tn(&c).scale(1.0 / (n - 1.0));
        let precision = inverse_spd(&cov).map_err(|_| Error::Degenerate("contour covariance".into()))?;
        let mut contour = Self {
            mean,
            precision,
            radius_sq: 0.0,
        };
        let d2: Vec<f64> = (0..points.rows())
            .map(|i| contour.mahalanobis_sq(points.row_slice(i)))
            .collect();
        contour.radius_sq = nearest_rank_percentile(&d2, percentile)?;
        Ok(contour)
    }

    pub fn mahalanobis_sq(&self, p: &[f64]) -> f64 {
        let d = [p[0] - self.mean[0], p[1] - self.mean[1]];
        let pr = &self.precision;
        d[0] * (pr[(0, 0)] * d[0] + pr[(0, 1)] * d[1]) + d[1] * (pr[(1, 0)] * d[0] + pr[(1, 1)] * d[1])
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        self.mahalanobis_sq(p) <= self.radius_sq
    }
}

/// Regular grid over two latent axes; other coordinates are held at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub axes: (usize, usize),
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub width: usize,
    pub height: usize,
}

impl GridSpec {
    /// `mean ± span · sd` of the projected points along each axis.
    pub fn around(points: &Mat, axes: (usize, usize), span: f64, width: usize, height: usize) -> Self {
        let range = |q: usize| {
            let v = points.col_vec(q);
            let n = v.len() as f64;
            let m = v.iter().sum::<f64>() / n;
            let sd = std_dev(&v);
            (m - span * sd, m + span * sd)
        };
        Self {
            axes,
            x_range: range(axes.0),
            y_range: range(axes.1),
            width,
            height,
        }
    }

    pub fn coordinate(&self, col: usize, row: usize) -> (f64, f64) {
        let lerp = |(lo, hi): (f64, f64), i: usize, n: usize| {
            if n <= 1 {
                0.5 * (lo + hi)
            } else {
                let t = i as f64 / (n - 1) as f64;
                lo * (1.0 - t) + hi * t
            }
        };
        (lerp(self.x_range, col, self.width), lerp(self.y_range, row, self.height))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiagnosticCell {
    pub row: usize,
    pub col: usize,
    pub x: f64,
    pub y: f64,
    pub distance: f64,
    pub inside: bool,
}

/// Round-trip distance at every grid cell, flagged against `contour`.
pub fn diagnostics_map(vae: &VaeModel, grid: &GridSpec, contour: &GaussianContour) -> Result<Vec<DiagnosticCell>> {
    let d = vae.latent_dim();
    let (a, b) = grid.axes;
    if a >= d || b >= d || a == b {
        return Err(Error::InvalidParameter(alloc::format!(
            "grid axes {a}, {b} invalid for latent dimension {d}"
        )));
    }
    let n = grid.width * grid.height;
    let mut z = Mat::zeros(n, d);
    for row in 0..grid.height {
        for col in 0..grid.width {
            let (x, y) = grid.coordinate(col, row);
            let r = z.row_slice_mut(row * grid.width + col);
            r[a] = x;
            r[b] = y;
        }
    }
    let dist = vae.roundtrip_distances(&z)?;
    Ok((0..n)
        .map(|k| {
            let (row, col) = (k / grid.width, k % grid.width);
            let (x, y) = grid.coordinate(col, row);
            DiagnosticCell {
                row,
                col,
                x,
                y,
                distance: dist[k],
                inside: contour.contains(&[x, y]),
            }
        })
        .collect())
}

/// Mean distance inside and outside the contour; `None` for an empty side.
pub fn split_means(cells: &[DiagnosticCell]) -> (Option<f64>, Option<f64>) {
    let mean = |inside: bool| {
        let v: Vec<f64> = cells.iter().filter(|c| c.inside == inside).map(|c| c.distance).collect();
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    };
    (mean(true), mean(false))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_convention() {
        let train = [1.0, 5.0];
        assert_eq!(normalize(&[1.0], &train).unwrap(), alloc::vec![0.0]);
        // std of {1, 5} is 2
        assert_eq!(normalize(&[3.0], &train).unwrap(), alloc::vec![1.0]);
        assert_eq!(normalize(&[1.0], &[2.0, 2.0]), Err(Error::ZeroSpread));
    }

    #[test]
    fn curve_statistics() {
        let c = RegretCurve::from_runs(alloc::vec![alloc::vec![1.0, 0.0], alloc::vec![3.0, 0.0]]).unwrap();
        assert_eq!(c.mean, alloc::vec![2.0, 0.0]);
        assert!((c.sem[0] - 1.0).abs() < 1e-15);
        assert!(RegretCurve::from_runs(alloc::vec![alloc::vec![1.0], alloc::vec![]]).is_err());
    }

    #[test]
    fn identity_map_is_flat() {
        let vae = VaeModel::identity_embedding(5, 3).unwrap();
        let pts = Mat::from_fn(50, 2, |i, j| ((i * (j + 2)) % 7) as f64 - 3.0);
        let contour = GaussianContour::fit(&pts, 99.0).unwrap();
        let grid = GridSpec::around(&pts, (0, 1), 3.0, 7, 5);
        let cells = diagnostics_map(&vae, &grid, &contour).unwrap();
        assert_eq!(cells.len(), 35);
        assert!(cells.iter().all(|c| c.distance == 0.0));
    }
}
