//! The Shape benchmark (rotated rectangles on a 10x10 canvas) and a synthetic
//! benchmark with a known optimum behind a seeded tanh embedding.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)] // std float methods shadow these in test builds
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::boloop::BlackBox;
use crate::error::{Error, Result};
use crate::ndcore::linalg::{cholesky, cholesky_solve};
use crate::ndcore::Mat;

pub const SHAPE_SIDE: usize = 10;
pub const SHAPE_PIXELS: usize = SHAPE_SIDE * SHAPE_SIDE;
/// No training image covers more pixels than this.
pub const SHAPE_AREA_CAP: f64 = 60.0;
/// Half-extents are drawn uniformly from this range.
pub const SHAPE_HALF_EXTENT: (f64, f64) = (0.5, 4.5);
const MAX_SHAPE_TRIALS: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeParams {
    pub cx: f64,
    pub cy: f64,
    pub half_width: f64,
    pub half_height: f64,
    /// Counter-clockwise rotation in `[0, π)`.
    pub angle: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeImage {
    pub pixels: Vec<f64>,
    pub params: ShapeParams,
}

/// Pixel `(row, col)` is set when its center `(col + ½, row + ½)` lies in the
/// closed rotated rectangle.
pub fn rasterize(p: &ShapeParams) -> Vec<f64> {
    let (s, c) = p.angle.sin_cos();
    let mut px = vec![0.0; SHAPE_PIXELS];
    for row in 0..SHAPE_SIDE {
        for col in 0..SHAPE_SIDE {
            let dx = col as f64 + 0.5 - p.cx;
            let dy = row as f64 + 0.5 - p.cy;
            let u = dx * c + dy * s;
            let v = -dx * s + dy * c;
            if u.abs() <= p.half_width && v.abs() <= p.half_height {
                px[row * SHAPE_SIDE + col] = 1.0;
            }
        }
    }
    px
}

/// Sum of intensities.
pub fn shape_area(pixels: &[f64]) -> Result<f64> {
    if pixels.len() != SHAPE_PIXELS {
        return Err(Error::DimensionMismatch {
            context: "shape image",
            expected: SHAPE_PIXELS,
            got: pixels.len(),
        });
    }
    Ok(pixels.iter().sum())
}

/// `n` images with uniformly drawn parameters, rejecting empty images and
/// those above the area cap.
pub fn shape_generate<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<ShapeImage>> {
    let mut out = Vec::with_capacity(n);
    let mut trials = 0;
    let (lo, hi) = SHAPE_HALF_EXTENT;
    while out.len() < n {
        trials += 1;
        if trials > MAX_SHAPE_TRIALS {
            return Err(Error::Rejection {
                trials,
                accepted: out.len(),
            });
        }
        let params = ShapeParams {
            cx: rng.random_range(0.0..SHAPE_SIDE as f64),
            cy: rng.random_range(0.0..SHAPE_SIDE as f64),
            half_width: rng.random_range(lo..hi),
            half_height: rng.random_range(lo..hi),
            angle: rng.random_range(0.0..PI),
        };
        let pixels = rasterize(&params);
        let area: f64 = pixels.iter().sum();
        if area >= 1.0 && area <= SHAPE_AREA_CAP {
            out.push(ShapeImage { pixels, params });
        }
    }
    Ok(out)
}

/// Images stacked as rows.
pub fn shape_matrix(images: &[ShapeImage]) -> Mat {
    let mut m = Mat::zeros(images.len(), SHAPE_PIXELS);
    for (i, img) in images.iter().enumerate() {
        m.row_slice_mut(i).copy_from_slice(&img.pixels);
    }
    m
}

/// Negative area of an image, optionally after thresholding at ½.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeBlackBox {
    pub thresholded: bool,
    pub noise_sigma: f64,
}

impl Default for ShapeBlackBox {
    fn default() -> Self {
        Self {
            thresholded: false,
            noise_sigma: 0.0,
        }
    }
}

impl BlackBox for ShapeBlackBox {
    fn eval(&self, x: &[f64]) -> Result<f64> {
        if self.thresholded {
            let hard: Vec<f64> = x.iter().map(|p| if *p >= 0.5 { 1.0 } else { 0.0 }).collect();
            Ok(-shape_area(&hard)?)
        } else {
            Ok(-shape_area(x)?)
        }
    }

    fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticObjective {
    /// `‖t − t*‖²`, minimum 0 at `t*`.
    Quadratic,
}

impl SyntheticObjective {
    pub fn name(self) -> &'static str {
        match self {
            SyntheticObjective::Quadratic => "quadratic",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "quadratic" => Some(SyntheticObjective::Quadratic),
            _ => None,
        }
    }
}

/// Intrinsic coordinates are drawn from this box.
pub const SYNTHETIC_BOX: (f64, f64) = (-1.0, 1.0);
const ATANH_CLIP: f64 = 1.0 - 1e-9;

/// `x = tanh(W t + b)` with seeded `W` (`ambient x intrinsic`) and `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticBenchmark {
    ambient_dim: usize,
    intrinsic_dim: usize,
    weight: Mat,
    bias: Vec<f64>,
    target: Vec<f64>,
    objective: SyntheticObjective,
    /// `(WᵀW)⁻¹Wᵀ`
    pinv: Mat,
}

impl SyntheticBenchmark {
    pub fn new(
        ambient_dim: usize,
        intrinsic_dim: usize,
        objective: SyntheticObjective,
        seed: u64,
    ) -> Result<Self> {
        if intrinsic_dim == 0 || ambient_dim < intrinsic_dim {
            return Err(Error::InvalidParameter(alloc::format!(
                "synthetic benchmark needs 0 < intrinsic <= ambient, got {intrinsic_dim} and {ambient_dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (intrinsic_dim as f64).sqrt();
        let weight = Mat::from_fn(ambient_dim, intrinsic_dim, |_, _| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g * scale
        });
        let bias = (0..ambient_dim)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                0.1 * g
            })
            .collect();
        let target = (0..intrinsic_dim).map(|_| rng.random_range(-0.5..0.5)).collect();
        let gram = weight.matmul_tn(&weight);
        let l = cholesky(&gram)?;
        let pinv = cholesky_solve(&l, &weight.transpose());
        Ok(Self {
            ambient_dim,
            intrinsic_dim,
            weight,
            bias,
            target,
            objective,
            pinv,
        })
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.intrinsic_dim
    }

    pub fn objective(&self) -> SyntheticObjective {
        self.objective
    }

    pub fn argmin(&self) -> &[f64] {
        &self.target
    }

    pub fn optimum(&self) -> f64 {
        0.0
    }

    pub fn embed(&self, t: &[f64]) -> Vec<f64> {
        (0..self.ambient_dim)
            .map(|i| {
                let a: f64 = self
                    .weight
                    .row_slice(i)
                    .iter()
                    .zip(t)
                    .map(|(w, v)| w * v)
                    .sum();
                (a + self.bias[i]).tanh()
            })
            .collect()
    }

    /// Least-squares pre-image of `x` under the embedding.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let a: Vec<f64> = x
            .iter()
            .zip(&self.bias)
            .map(|(v, b)| v.max(-ATANH_CLIP).min(ATANH_CLIP).atanh() - b)
            .collect();
        (0..self.intrinsic_dim)
            .map(|k| self.pinv.row_slice(k).iter().zip(&a).map(|(p, v)| p * v).sum())
            .collect()
    }

    pub fn eval_intrinsic(&self, t: &[f64]) -> f64 {
        match self.objective {
            SyntheticObjective::Quadratic => t
                .iter()
                .zip(&self.target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.ambient_dim {
            return Err(Error::DimensionMismatch {
                context: "synthetic input",
                expected: self.ambient_dim,
                got: x.len(),
            });
        }
        Ok(self.eval_intrinsic(&self.project(x)))
    }

    /// `n` embedded points with intrinsic coordinates uniform on the box.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Mat {
        let (lo, hi) = SYNTHETIC_BOX;
        let mut m = Mat::zeros(n, self.ambient_dim);
        for i in 0..n {
            let t: Vec<f64> = (0..self.intrinsic_dim).map(|_| rng.random_range(lo..hi)).collect();
            m.row_slice_mut(i).copy_from_slice(&self.embed(&t));
        }
        m
    }

    pub fn describe(&self) -> String {
        alloc::format!(
            "synthetic {} ambient {} intrinsic {}",
            self.objective.name(),
            self.ambient_dim,
            self.intrinsic_dim
        )
    }
}

/// [`SyntheticBenchmark`] as a black box with optional observation noise.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticBlackBox {
    pub bench: SyntheticBenchmark,
    pub noise_sigma: f64,
}

impl BlackBox for SyntheticBlackBox {
    fn eval(&self, x: &[f64]) -> Result<f64> {
        self.bench.eval(x)
    }

    fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn area_of_constant_images() {
        assert_eq!(shape_area(&[1.0; 100]).unwrap(), 100.0);
        assert_eq!(shape_area(&[0.0; 100]).unwrap(), 0.0);
        assert!(shape_area(&[0.0; 99]).is_err());
    }

    #[test]
    fn axis_aligned_rectangle_area() {
        // x in [2, 5], y in [3, 7]: 3 columns by 4 rows of pixel centers
        let p = ShapeParams {
            cx: 3.5,
            cy: 5.0,
            half_width: 1.5,
            half_height: 2.0,
            angle: 0.0,
        };
        assert_eq!(shape_area(&rasterize(&p)).unwrap(), 12.0);
    }

    #[test]
    fn quarter_turn_with_swapped_extents_is_identical() {
        let p = ShapeParams {
            cx: 4.3,
            cy: 5.2,
            half_width: 2.2,
            half_height: 1.3,
            angle: 0.0,
        };
        let q = ShapeParams {
            half_width: p.half_height,
            half_height: p.half_width,
            angle: PI / 2.0,
            ..p
        };
        assert_eq!(rasterize(&p), rasterize(&q));
    }

    #[test]
    fn generated_images_respect_the_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let imgs = shape_generate(500, &mut rng).unwrap();
        for img in &imgs {
            let a = shape_area(&img.pixels).unwrap();
            assert!((1.0..=SHAPE_AREA_CAP).contains(&a));
            assert!(img.pixels.iter().all(|p| *p == 0.0 || *p == 1.0));
        }
    }

    #[test]
    fn embedding_pre_image_is_exact() {
        let b = SyntheticBenchmark::new(20, 2, SyntheticObjective::Quadratic, 3).unwrap();
        let x = b.embed(b.argmin());
        assert!(b.eval(&x).unwrap().abs() < 1e-8);
        let t = [0.3, -0.7];
        let back = b.project(&b.embed(&t));
        assert!((back[0] - t[0]).abs() < 1e-8 && (back[1] - t[1]).abs() < 1e-8);
    }
}
