//! Regions of the latent space the acquisition function is optimized over.
//!
//! Every region is a membership oracle plus an axis-aligned bounding box that
//! members are rejection-sampled from.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // std float methods shadow these in test builds
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::ndcore::linalg::{cholesky, cholesky_with_jitter, inverse_spd, solve_lower};
use crate::ndcore::Mat;
use crate::vae::VaeModel;

/// Rejection sampling gives up after this many draws without a member.
pub const MAX_REJECTION_TRIALS: usize = 1_000_000;
/// Convex-combination feasibility tolerance of the hull test.
pub const HULL_TOLERANCE: f64 = 1e-8;
const ELLIPSOID_SLACK: f64 = 1e-9;
const KHACHIYAN_MAX_ITERS: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundsKind {
    Hypercube,
    Ellipsoid,
    Hull,
    RoundTrip,
}

impl BoundsKind {
    pub fn name(self) -> &'static str {
        match self {
            BoundsKind::Hypercube => "hypercube",
            BoundsKind::Ellipsoid => "ellipsoid",
            BoundsKind::Hull => "hull",
            BoundsKind::RoundTrip => "roundtrip",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "hypercube" => Some(BoundsKind::Hypercube),
            "ellipsoid" => Some(BoundsKind::Ellipsoid),
            "hull" => Some(BoundsKind::Hull),
            "roundtrip" => Some(BoundsKind::RoundTrip),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundsSpec {
    pub kind: BoundsKind,
    pub ellipsoid_tol: f64,
    /// Percentile in `(0, 100]` of training round-trip distances.
    pub roundtrip_percentile: f64,
    /// Relative growth of the training box used to sample round-trip members.
    pub roundtrip_inflation: f64,
}

impl Default for BoundsSpec {
    fn default() -> Self {
        Self {
            kind: BoundsKind::Hypercube,
            ellipsoid_tol: 1e-6,
            roundtrip_percentile: 90.0,
            roundtrip_inflation: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BoundsRegion {
    Hypercube {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Ellipsoid {
        center: Vec<f64>,
        matrix: Mat,
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    ConvexHull {
        vertices: Mat,
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    RoundTrip {
        vae: Arc<VaeModel>,
        threshold: f64,
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
}

fn column_extents(z: &Mat) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![f64::INFINITY; z.cols()];
    let mut hi = vec![f64::NEG_INFINITY; z.cols()];
    for i in 0..z.rows() {
        for (q, v) in z.row_slice(i).iter().enumerate() {
            lo[q] = lo[q].min(*v);
            hi[q] = hi[q].max(*v);
        }
    }
    (lo, hi)
}

fn require_points(z: &Mat, min: usize, what: &str) -> Result<()> {
    if z.rows() < min {
        return Err(Error::InsufficientData(format!(
            "{what} needs at least {min} points, got {}",
            z.rows()
        )));
    }
    Ok(())
}

/// True when the rows of `z` affinely span their space.
fn affinely_spanning(z: &Mat) -> bool {
    let d = z.cols();
    if z.rows() < d + 1 {
        return false;
    }
    let n = z.rows() as f64;
    let mean: Vec<f64> = (0..d).map(|q| (0..z.rows()).map(|i| z[(i, q)]).sum::<f64>() / n).collect();
    let c = Mat::from_fn(z.rows(), d, |i, q| z[(i, q)] - mean[q]);
    let cov = c.matmul_tn(&c).scale(1.0 / n);
    let scale = cov.diag().iter().cloned().fold(0.0, f64::max);
    if !(scale > 0.0) {
        return false;
    }
    match cholesky_with_jitter(&cov.scale(1.0 / scale)) {
        Ok((l, jitter)) => {
            let dmin = l.diag().iter().cloned().fold(f64::INFINITY, f64::min);
            jitter == 0.0 && dmin > 1e-6
        }
        Err(_) => false,
    }
}

/// Nearest-rank percentile: the `⌈p/100 · n⌉`-th smallest value.
pub fn nearest_rank_percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientData("percentile of an empty set".into()));
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::InvalidParameter(format!("percentile must be in (0, 100], got {p}")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    Ok(v[rank.clamp(1, v.len()) - 1])
}

pub fn fit_hypercube(z: &Mat) -> Result<BoundsRegion> {
    require_points(z, 1, "hypercube")?;
    let (lo, hi) = column_extents(z);
    Ok(BoundsRegion::Hypercube { lo, hi })
}

/// Minimum-volume enclosing ellipsoid by Khachiyan's weight iteration, run on
/// the hull vertices of `z`. `A` is finally scaled so the farthest point sits
/// at quadratic form `1 / (1 + 1e-9)`.
pub fn fit_ellipsoid(z: &Mat, tol: f64) -> Result<BoundsRegion> {
    let d = z.cols();
    require_points(z, d + 1, "ellipsoid")?;
    if !affinely_spanning(z) {
        return Err(Error::Degenerate("ellipsoid fit".into()));
    }
    let pts = if z.rows() > 4 * (d + 1) {
        extreme_points(z)
    } else {
        z.clone()
    };
    let (center, mut a) = khachiyan(&pts, tol)?;
    let max_form = (0..z.rows())
        .map(|i| quad_form(&a, &center, z.row_slice(i)))
        .fold(0.0, f64::max);
    if !(max_form > 0.0) || !max_form.is_finite() {
        return Err(Error::Degenerate("ellipsoid scaling".into()));
    }
    a = a.scale(1.0 / (max_form * (1.0 + ELLIPSOID_SLACK)));
    let inv = inverse_spd(&a)?;
    let half: Vec<f64> = inv.diag().iter().map(|v| v.max(0.0).sqrt()).collect();
    let lo = center.iter().zip(&half).map(|(c, h)| c - h).collect();
    let hi = center.iter().zip(&half).map(|(c, h)| c + h).collect();
    Ok(BoundsRegion::Ellipsoid {
        center,
        matrix: a,
        lo,
        hi,
    })
}

/// Weights `u` and the resulting `(center, A)`.
fn khachiyan(z: &Mat, tol: f64) -> Result<(Vec<f64>, Mat)> {
    let (n, d) = z.shape();
    let q = Mat::from_fn(d + 1, n, |r, i| if r < d { z[(i, r)] } else { 1.0 });
    let mut u = vec![1.0 / n as f64; n];
    for _ in 0..KHACHIYAN_MAX_ITERS {
        let mut x = Mat::zeros(d + 1, d + 1);
        for (i, ui) in u.iter().enumerate() {
            for r in 0..=d {
                for c in 0..=d {
                    x[(r, c)] += ui * q[(r, i)] * q[(c, i)];
                }
            }
        }
        let l = cholesky(&x).map_err(|_| Error::Degenerate("khachiyan moment matrix".into()))?;
        let v = solve_lower(&l, &q);
        let mut best = (0, f64::NEG_INFINITY);
        for i in 0..n {
            let m: f64 = (0..=d).map(|r| v[(r, i)] * v[(r, i)]).sum();
            if m > best.1 {
                best = (i, m);
            }
        }
        let (j, mj) = best;
        let step = (mj - d as f64 - 1.0) / ((d as f64 + 1.0) * (mj - 1.0));
        let mut change = 0.0;
        for (i, ui) in u.iter_mut().enumerate() {
            let next = (1.0 - step) * *ui + if i == j { step } else { 0.0 };
            change += (next - *ui) * (next - *ui);
            *ui = next;
        }
        if change.sqrt() < tol {
            break;
        }
    }
    let center: Vec<f64> = (0..d).map(|r| (0..n).map(|i| u[i] * z[(i, r)]).sum()).collect();
    let mut s = Mat::zeros(d, d);
    for (i, ui) in u.iter().enumerate() {
        for r in 0..d {
            for c in 0..d {
                s[(r, c)] += ui * z[(i, r)] * z[(i, c)];
            }
        }
    }
    for r in 0..d {
        for c in 0..d {
            s[(r, c)] -= center[r] * center[c];
        }
    }
    let a = inverse_spd(&s)
        .map_err(|_| Error::Degenerate("ellipsoid shape matrix".into()))?
        .scale(1.0 / d as f64);
    Ok((center, a))
}

fn quad_form(a: &Mat, center: &[f64], z: &[f64]) -> f64 {
    let d = center.len();
    let mut s = 0.0;
    for r in 0..d {
        let dr = z[r] - center[r];
        for c in 0..d {
            s += dr * a[(r, c)] * (z[c] - center[c]);
        }
    }
    s
}

/// Convex hull stored as a vertex superset: points found extreme along probe
/// directions, plus every other point not inside their hull.
pub fn fit_hull(z: &Mat) -> Result<BoundsRegion> {
    let d = z.cols();
    require_points(z, d + 1, "hull")?;
    if !affinely_spanning(z) {
        return Err(Error::Degenerate("hull fit".into()));
    }
    let vertices = extreme_points(z);
    let (lo, hi) = column_extents(&vertices);
    Ok(BoundsRegion::ConvexHull { vertices, lo, hi })
}

/// Rows of `z` whose removal could change the hull.
fn extreme_points(z: &Mat) -> Mat {
    let (n, d) = z.shape();
    let mut keep = vec![false; n];
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f_4011);
    let probes = 64 * d;
    let mut dir = vec![0.0; d];
    for p in 0..(2 * d + probes) {
        if p < 2 * d {
            dir.iter_mut().for_each(|v| *v = 0.0);
            dir[p / 2] = if p % 2 == 0 { 1.0 } else { -1.0 };
        } else {
            dir.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
        }
        let mut best = (0, f64::NEG_INFINITY);
        for i in 0..n {
            let s: f64 = z.row_slice(i).iter().zip(&dir).map(|(a, b)| a * b).sum();
            if s > best.1 {
                best = (i, s);
            }
        }
        keep[best.0] = true;
    }
    let seed_idx: Vec<usize> = (0..n).filter(|i| keep[*i]).collect();
    let seeds = z.select_rows(&seed_idx);
    let (lo, hi) = column_extents(&seeds);
    let mut all = seed_idx.clone();
    for i in 0..n {
        if keep[i] {
            continue;
        }
        let p = z.row_slice(i);
        let in_box = p.iter().zip(lo.iter().zip(&hi)).all(|(v, (l, h))| *v >= *l && *v <= *h);
        if !in_box || !in_convex_hull(&seeds, p) {
            all.push(i);
        }
    }
    all.sort_unstable();
    z.select_rows(&all)
}

/// Phase-I simplex: is there `λ ≥ 0`, `Σλ = 1`, `Vᵀλ = p`?
pub fn in_convex_hull(vertices: &Mat, p: &[f64]) -> bool {
    let (k, d) = vertices.shape();
    let rows = d + 1;
    let cols = k + rows + 1;
    let rhs = cols - 1;
    let mut t = vec![0.0; rows * cols];
    let scale = 1.0 + p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for r in 0..rows {
        let b = if r < d { p[r] } else { 1.0 };
        let sign = if b < 0.0 { -1.0 } else { 1.0 };
        for j in 0..k {
            let a = if r < d { vertices[(j, r)] } else { 1.0 };
            t[r * cols + j] = sign * a;
        }
        t[r * cols + k + r] = 1.0;
        t[r * cols + rhs] = sign * b;
    }
    let mut basis: Vec<usize> = (k..k + rows).collect();
    // reduced costs of the artificial-sum objective
    let mut w = vec![0.0; cols];
    for r in 0..rows {
        for j in 0..k {
            w[j] -= t[r * cols + j];
        }
        w[rhs] -= t[r * cols + rhs];
    }
    let tol = HULL_TOLERANCE * scale;
    for _ in 0..50 * (k + rows) {
        if -w[rhs] <= tol {
            return true;
        }
        // Bland's rule keeps the method from cycling.
        let Some(q) = (0..k + rows).find(|&j| w[j] < -1e-12) else {
            break;
        };
        let mut pivot: Option<(usize, f64)> = None;
        for r in 0..rows {
            let a = t[r * cols + q];
            if a > 1e-12 {
                let ratio = t[r * cols + rhs] / a;
                let better = match pivot {
                    None => true,
                    Some((pr, pv)) => ratio < pv - 1e-15 || (ratio <= pv + 1e-15 && basis[r] < basis[pr]),
                };
                if better {
                    pivot = Some((r, ratio));
                }
            }
        }
        let Some((pr, _)) = pivot else {
            break;
        };
        let pv = t[pr * cols + q];
        for j in 0..cols {
            t[pr * cols + j] /= pv;
        }
        for r in 0..rows {
            if r == pr {
                continue;
            }
            let f = t[r * cols + q];
            if f != 0.0 {
                for j in 0..cols {
                    t[r * cols + j] -= f * t[pr * cols + j];
                }
            }
        }
        let f = w[q];
        for j in 0..cols {
            w[j] -= f * t[pr * cols + j];
        }
        basis[pr] = q;
    }
    -w[rhs] <= tol
}

/// Round-trip region: `‖z − roundtrip_mean(z)‖ ≤ τ` with `τ` the given
/// percentile of the training distances, sampled from the training box grown
/// by `inflation` of its width on each side.
pub fn fit_roundtrip(vae: Arc<VaeModel>, z: &Mat, percentile: f64, inflation: f64) -> Result<BoundsRegion> {
    require_points(z, 1, "roundtrip")?;
    if !(inflation >= 0.0) {
        return Err(Error::InvalidParameter(format!("inflation must be non-negative, got {inflation}")));
    }
    let dist = vae.roundtrip_distances(z)?;
    let threshold = nearest_rank_percentile(&dist, percentile)?;
    let (mut lo, mut hi) = column_extents(z);
    for (l, h) in lo.iter_mut().zip(hi.iter_mut()) {
        let w = (*h - *l) * inflation;
        *l -= w;
        *h += w;
    }
    Ok(BoundsRegion::RoundTrip {
        vae,
        threshold,
        lo,
        hi,
    })
}

/// Fits the region named by `spec`. Ellipsoid and hull fits on degenerate
/// point sets fall back to the hypercube; the returned flag reports it.
pub fn fit_region(spec: &BoundsSpec, z: &Mat, vae: &Arc<VaeModel>) -> Result<(BoundsRegion, bool)> {
    let fitted = match spec.kind {
        BoundsKind::Hypercube => fit_hypercube(z),
        BoundsKind::Ellipsoid => fit_ellipsoid(z, spec.ellipsoid_tol),
        BoundsKind::Hull => fit_hull(z),
        BoundsKind::RoundTrip => fit_roundtrip(
            Arc::clone(vae),
            z,
            spec.roundtrip_percentile,
            spec.roundtrip_inflation,
        ),
    };
    match fitted {
        Ok(r) => Ok((r, false)),
        Err(Error::Degenerate(why)) => {
            log::warn!("{why}: using the hypercube region");
            Ok((fit_hypercube(z)?, true))
        }
        Err(e) => Err(e),
    }
}

impl BoundsRegion {
    pub fn kind(&self) -> BoundsKind {
        match self {
            BoundsRegion::Hypercube { .. } => BoundsKind::Hypercube,
            BoundsRegion::Ellipsoid { .. } => BoundsKind::Ellipsoid,
            BoundsRegion::ConvexHull { .. } => BoundsKind::Hull,
            BoundsRegion::RoundTrip { .. } => BoundsKind::RoundTrip,
        }
    }

    pub fn dim(&self) -> usize {
        self.bounding_box().0.len()
    }

    pub fn bounding_box(&self) -> (&[f64], &[f64]) {
        match self {
            BoundsRegion::Hypercube { lo, hi }
            | BoundsRegion::Ellipsoid { lo, hi, .. }
            | BoundsRegion::ConvexHull { lo, hi, .. }
            | BoundsRegion::RoundTrip { lo, hi, .. } => (lo, hi),
        }
    }

    fn in_box(&self, z: &[f64]) -> bool {
        let (lo, hi) = self.bounding_box();
        z.len() == lo.len() && z.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    /// Quadratic form of the ellipsoid at `z`, if this is one.
    pub fn ellipsoid_form(&self, z: &[f64]) -> Option<f64> {
        match self {
            BoundsRegion::Ellipsoid { center, matrix, .. } => Some(quad_form(matrix, center, z)),
            _ => None,
        }
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        match self {
            BoundsRegion::Hypercube { .. } => self.in_box(z),
            BoundsRegion::Ellipsoid { center, matrix, .. } => {
                z.len() == center.len() && quad_form(matrix, center, z) <= 1.0
            }
            BoundsRegion::ConvexHull { vertices, .. } => self.in_box(z) && in_convex_hull(vertices, z),
            BoundsRegion::RoundTrip { vae, threshold, .. } => {
                if z.len() != vae.latent_dim() {
                    return false;
                }
                match vae.roundtrip_distances(&Mat::row(z)) {
                    Ok(d) => d[0] <= *threshold,
                    Err(_) => false,
                }
            }
        }
    }

    /// Membership of every row of `z`.
    pub fn contains_batch(&self, z: &Mat) -> Vec<bool> {
        match self {
            BoundsRegion::RoundTrip { vae, threshold, .. } if z.cols() == vae.latent_dim() => {
                match vae.roundtrip_distances(z) {
                    Ok(d) => d.iter().map(|v| *v <= *threshold).collect(),
                    Err(_) => (0..z.rows()).map(|i| self.contains(z.row_slice(i))).collect(),
                }
            }
            _ => (0..z.rows()).map(|i| self.contains(z.row_slice(i))).collect(),
        }
    }

    fn draw_box<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let (lo, hi) = self.bounding_box();
        lo.iter()
            .zip(hi)
            .map(|(l, h)| l + (h - l) * rng.random::<f64>())
            .collect()
    }

    /// Up to `n` members by rejection sampling from the bounding box. Fails
    /// only when no member turns up in [`MAX_REJECTION_TRIALS`] draws.
    pub fn sample_members<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Mat> {
        let d = self.dim();
        let mut out: Vec<f64> = Vec::with_capacity(n * d);
        let mut accepted = 0;
        let mut trials = 0;
        while accepted < n && trials < MAX_REJECTION_TRIALS {
            let chunk = (n - accepted).max(64).min(MAX_REJECTION_TRIALS - trials);
            let mut cand = Mat::zeros(chunk, d);
            for i in 0..chunk {
                let z = self.draw_box(rng);
                cand.row_slice_mut(i).copy_from_slice(&z);
            }
            trials += chunk;
            for (i, ok) in self.contains_batch(&cand).into_iter().enumerate() {
                if ok && accepted < n {
                    out.extend_from_slice(cand.row_slice(i));
                    accepted += 1;
                }
            }
        }
        if accepted == 0 && n > 0 {
            return Err(Error::Rejection { trials, accepted });
        }
        Ok(Mat::from_vec(accepted, d, out))
    }

    pub fn sample_member<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        Ok(self.sample_members(1, rng)?.into_vec())
    }

    /// Variant tag and parameters on one line.
    pub fn describe(&self) -> String {
        match self {
            BoundsRegion::Hypercube { lo, hi } => format!("hypercube lo={lo:?} hi={hi:?}"),
            BoundsRegion::Ellipsoid { center, matrix, .. } => {
                format!("ellipsoid center={center:?} A={:?}", matrix.data())
            }
            BoundsRegion::ConvexHull { vertices, .. } => {
                format!("hull vertices={} dim={}", vertices.rows(), vertices.cols())
            }
            BoundsRegion::RoundTrip { threshold, lo, hi, .. } => {
                format!("roundtrip threshold={threshold:e} lo={lo:?} hi={hi:?}")
            }
        }
    }
}
