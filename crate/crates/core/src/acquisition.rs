//! EI, PI, LCB and Thompson sampling under the minimization convention, with
//! a candidate-and-refine maximizer over a [`BoundsRegion`].

use alloc::vec::Vec;

#[allow(unused_imports)] // std float methods shadow these in test builds
use num_traits::Float;
use rand::Rng;

use crate::bounds::BoundsRegion;
use crate::error::{Error, Result};
use crate::gp::{GplvmModel, PredictiveGaussian, Predictor};
use crate::ndcore::Mat;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_pdf(u: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * u * u).exp()
}

pub fn normal_cdf(u: f64) -> f64 {
    0.5 * libm::erfc(-u / core::f64::consts::SQRT_2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AcquisitionKind {
    Ei,
    Pi,
    Lcb,
    Ts,
    /// Uniform draw from the region; a baseline, not an acquisition rule.
    Random,
}

impl AcquisitionKind {
    pub fn name(self) -> &'static str {
        match self {
            AcquisitionKind::Ei => "ei",
            AcquisitionKind::Pi => "pi",
            AcquisitionKind::Lcb => "lcb",
            AcquisitionKind::Ts => "ts",
            AcquisitionKind::Random => "random",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ei" => Some(AcquisitionKind::Ei),
            "pi" => Some(AcquisitionKind::Pi),
            "lcb" => Some(AcquisitionKind::Lcb),
            "ts" => Some(AcquisitionKind::Ts),
            "random" => Some(AcquisitionKind::Random),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AcquisitionSpec {
    pub kind: AcquisitionKind,
    pub lcb_beta: f64,
    pub ts_candidates: usize,
    pub xi: f64,
    pub num_candidates: usize,
    pub num_refine: usize,
}

impl Default for AcquisitionSpec {
    fn default() -> Self {
        Self {
            kind: AcquisitionKind::Ei,
            lcb_beta: 2.0,
            ts_candidates: 2048,
            xi: 0.0,
            num_candidates: 4096,
            num_refine: 8,
        }
    }
}

impl AcquisitionSpec {
    pub fn with_kind(kind: AcquisitionKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lcb_beta > 0.0) || !(self.xi >= 0.0) {
            return Err(Error::InvalidParameter(alloc::format!(
                "acquisition needs lcb_beta > 0 and xi >= 0, got {} and {}",
                self.lcb_beta,
                self.xi
            )));
        }
        if self.ts_candidates == 0 || self.num_candidates == 0 {
            return Err(Error::InvalidParameter("candidate counts must be positive".into()));
        }
        Ok(())
    }
}

/// Acquisition value of a predictive distribution (larger is better).
/// Thompson sampling and the random baseline have no closed-form score; they
/// fall back to the posterior mean improvement `y_best − μ`.
pub fn score(spec: &AcquisitionSpec, pred: &PredictiveGaussian, y_best: f64) -> f64 {
    let sigma = pred.std_dev();
    let gain = y_best - pred.mean - spec.xi;
    match spec.kind {
        AcquisitionKind::Ei => {
            if sigma > 0.0 {
                let u = gain / sigma;
                sigma * normal_pdf(u) + gain * normal_cdf(u)
            } else {
                gain.max(0.0)
            }
        }
        AcquisitionKind::Pi => {
            if sigma > 0.0 {
                normal_cdf(gain / sigma)
            } else if gain > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        AcquisitionKind::Lcb => spec.lcb_beta * sigma - pred.mean,
        AcquisitionKind::Ts | AcquisitionKind::Random => y_best - pred.mean,
    }
}

/// A chosen latent point and its acquisition value.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub z: Vec<f64>,
    pub value: f64,
}

fn score_batch(spec: &AcquisitionSpec, pred: &Predictor, z: &Mat, y_best: f64) -> Result<Vec<f64>> {
    Ok(pred
        .predict_batch(z)?
        .iter()
        .map(|p| score(spec, p, y_best))
        .collect())
}

/// Best of `num_candidates` region members, then coordinate-wise pattern
/// search from the `num_refine` best, keeping every move inside the region.
pub fn maximize<R: Rng + ?Sized>(
    spec: &AcquisitionSpec,
    gp: &GplvmModel,
    region: &BoundsRegion,
    y_best: f64,
    rng: &mut R,
) -> Result<Selection> {
    let pred = gp.predictor()?;
    let cands = region.sample_members(spec.num_candidates, rng)?;
    let scores = score_batch(spec, &pred, &cands, y_best)?;
    let mut order: Vec<usize> = (0..cands.rows()).collect();
    order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)));
    let (lo, hi) = region.bounding_box();
    let width: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| (h - l).max(1e-12)).collect();
    let d = width.len();

    let mut best = Selection {
        z: cands.row_slice(order[0]).to_vec(),
        value: scores[order[0]],
    };
    for &start in order.iter().take(spec.num_refine.max(1)) {
        let mut z = cands.row_slice(start).to_vec();
        let mut val = scores[start];
        let mut step = 0.05;
        for _ in 0..60 {
            if step < 1e-4 {
                break;
            }
            let mut trial = Mat::zeros(2 * d, d);
            for q in 0..d {
                for (s, sign) in [(0, 1.0), (1, -1.0)] {
                    let row = trial.row_slice_mut(2 * q + s);
                    row.copy_from_slice(&z);
                    row[q] += sign * step * width[q];
                }
            }
            let inside = region.contains_batch(&trial);
            let ts = score_batch(spec, &pred, &trial, y_best)?;
            let mut moved = false;
            let mut pick = (usize::MAX, val);
            for (i, ok) in inside.iter().enumerate() {
                if *ok && ts[i] > pick.1 {
                    pick = (i, ts[i]);
                }
            }
            if pick.0 != usize::MAX {
                z = trial.row_slice(pick.0).to_vec();
                val = pick.1;
                moved = true;
            }
            if !moved {
                step *= 0.5;
            }
        }
        if val > best.value {
            best = Selection { z, value: val };
        }
    }
    Ok(best)
}

/// Thompson sampling on `ts_candidates` region members: argmin of one joint
/// posterior draw. The reported value is the negated sampled minimum.
pub fn ts_select<R: Rng + ?Sized>(
    spec: &AcquisitionSpec,
    gp: &GplvmModel,
    region: &BoundsRegion,
    rng: &mut R,
) -> Result<Selection> {
    let cands = region.sample_members(spec.ts_candidates, rng)?;
    ts_select_from(gp, &cands, rng)
}

/// Thompson sampling over an explicit candidate set.
pub fn ts_select_from<R: Rng + ?Sized>(gp: &GplvmModel, cands: &Mat, rng: &mut R) -> Result<Selection> {
    let f = gp.posterior_sample_on_set(cands, rng)?;
    let mut j = 0;
    for (i, v) in f.iter().enumerate() {
        if *v < f[j] {
            j = i;
        }
    }
    Ok(Selection {
        z: cands.row_slice(j).to_vec(),
        value: -f[j],
    })
}

/// Dispatches on `spec.kind`. The random baseline returns a uniform region
/// member with value 0.
pub fn select<R: Rng + ?Sized>(
    spec: &AcquisitionSpec,
    gp: &GplvmModel,
    region: &BoundsRegion,
    y_best: f64,
    rng: &mut R,
) -> Result<Selection> {
    match spec.kind {
        AcquisitionKind::Ts => ts_select(spec, gp, region, rng),
        AcquisitionKind::Random => Ok(Selection {
            z: region.sample_member(rng)?,
            value: 0.0,
        }),
        _ => maximize(spec, gp, region, y_best, rng),
    }
}
