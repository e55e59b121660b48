//! Squared-exponential ARD kernel, sparse variational GP and the GPLVM bound
//! with uncertain inputs.
//!
//! The variational posterior is unwhitened, `q(u) = N(m, LᵀL)` with `L` lower
//! triangular, and the prior is `p(u) = N(0, K_uu)`.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // std float methods shadow these in test builds
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::ndcore::linalg::{
    self, cholesky, reverse_cholesky, solve_lower, solve_lower_transpose,
};
use crate::ndcore::{Graph, Mat, Tensor, Var};
use crate::vae::EncodedDistribution;

/// Relative jitter on the diagonal of `K_uu`, shared by every code path.
pub const INDUCING_JITTER: f64 = 1e-8;
pub const NOISE_VARIANCE_FLOOR: f64 = 1e-6;
pub const LENGTHSCALE_RANGE: (f64, f64) = (1e-3, 1e3);
pub const SIGNAL_VARIANCE_RANGE: (f64, f64) = (1e-6, 1e6);
pub const VARIANCE_FLOOR: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq)]
pub struct SqExpArdKernel {
    pub variance: f64,
    pub lengthscales: Vec<f64>,
}

impl SqExpArdKernel {
    pub fn new(variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        let k = Self {
            variance,
            lengthscales,
        };
        k.validate()?;
        Ok(k)
    }

    fn validate(&self) -> Result<()> {
        let ok = self.variance.is_finite()
            && self.variance > 0.0
            && !self.lengthscales.is_empty()
            && self.lengthscales.iter().all(|l| l.is_finite() && *l > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(alloc::format!(
                "kernel needs positive variance and lengthscales, got {} and {:?}",
                self.variance,
                self.lengthscales
            )))
        }
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Gram matrix between the rows of `z1` and `z2`.
    pub fn eval(&self, z1: &Mat, z2: &Mat) -> Result<Mat> {
        self.validate()?;
        for z in [z1, z2] {
            if z.cols() != self.dim() {
                return Err(Error::DimensionMismatch {
                    context: "kernel input",
                    expected: self.dim(),
                    got: z.cols(),
                });
            }
        }
        let inv: Vec<f64> = self.lengthscales.iter().map(|l| 1.0 / l).collect();
        Ok(Mat::from_fn(z1.rows(), z2.rows(), |i, j| {
            let r2: f64 = z1
                .row_slice(i)
                .iter()
                .zip(z2.row_slice(j))
                .zip(&inv)
                .map(|((a, b), s)| {
                    let t = (a - b) * s;
                    t * t
                })
                .sum();
            self.variance * (-0.5 * r2).exp()
        }))
    }
}

/// Latent-function predictive distribution at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictiveGaussian {
    pub mean: f64,
    pub variance: f64,
}

impl PredictiveGaussian {
    pub fn std_dev(&self) -> f64 {
        self.variance.max(0.0).sqrt()
    }
}

/// Affine map from the units the GP is fitted in to the caller's units:
/// `y = shift + scale * f`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutputTransform {
    pub shift: f64,
    pub scale: f64,
}

impl Default for OutputTransform {
    fn default() -> Self {
        Self {
            shift: 0.0,
            scale: 1.0,
        }
    }
}

impl OutputTransform {
    /// Standardizes by the sample mean and (population) standard deviation;
    /// a zero spread keeps unit scale.
    pub fn standardizing(y: &[f64]) -> Self {
        if y.is_empty() {
            return Self::default();
        }
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        Self {
            shift: mean,
            scale: if sd > 1e-12 { sd } else { 1.0 },
        }
    }

    pub fn forward(&self, y: f64) -> f64 {
        (y - self.shift) / self.scale
    }

    pub fn inverse(&self, f: f64) -> f64 {
        self.shift + self.scale * f
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GplvmModel {
    log_variance: Tensor,
    log_lengthscales: Tensor,
    inducing: Tensor,
    q_mean: Tensor,
    q_chol_raw: Tensor,
    log_noise_variance: Tensor,
    pub num_mc_samples: usize,
    output: OutputTransform,
}

/// Graph handles of the GP parameters, in [`GplvmModel::params_mut`] order.
#[derive(Clone, Copy, Debug)]
pub struct GpVars {
    pub log_variance: Var,
    pub log_lengthscales: Var,
    pub log_noise_variance: Var,
    pub inducing: Var,
    pub q_mean: Var,
    pub q_chol_raw: Var,
}

impl GpVars {
    pub fn all(&self) -> [Var; 6] {
        [
            self.log_variance,
            self.log_lengthscales,
            self.log_noise_variance,
            self.inducing,
            self.q_mean,
            self.q_chol_raw,
        ]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GpElboGraph {
    pub elbo: Var,
    pub expected_log_lik: Var,
    pub kl: Var,
}

/// Strict lower part of `l` with `ln` of its diagonal, the inverse of
/// [`Graph::lower_from_raw`].
fn raw_from_lower(l: &Mat) -> Result<Mat> {
    let n = l.rows();
    let mut raw = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            raw[(i, j)] = l[(i, j)];
        }
        let d = l[(i, i)];
        if !(d > 0.0) {
            return Err(Error::InvalidParameter(alloc::format!(
                "q(u) factor needs a positive diagonal, entry {i} is {d}"
            )));
        }
        raw[(i, i)] = d.ln();
    }
    Ok(raw)
}

fn lower_from_raw(raw: &Mat) -> Mat {
    Mat::from_fn(raw.rows(), raw.cols(), |i, j| match j.cmp(&i) {
        core::cmp::Ordering::Less => raw[(i, j)],
        core::cmp::Ordering::Equal => raw[(i, i)].exp(),
        core::cmp::Ordering::Greater => 0.0,
    })
}

fn col_sum_sq(m: &Mat) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (o, v) in out.iter_mut().zip(m.row_slice(i)) {
            *o += v * v;
        }
    }
    out
}

impl GplvmModel {
    /// Model with `q(u) = p(u)`, so predictions start at the prior.
    pub fn new(kernel: SqExpArdKernel, inducing: Mat, noise_variance: f64) -> Result<Self> {
        kernel.validate()?;
        if inducing.cols() != kernel.dim() || inducing.rows() == 0 {
            return Err(Error::DimensionMismatch {
                context: "inducing inputs",
                expected: kernel.dim(),
                got: inducing.cols(),
            });
        }
        if !(noise_variance > 0.0) || !noise_variance.is_finite() {
            return Err(Error::InvalidParameter(alloc::format!(
                "noise variance must be positive, got {noise_variance}"
            )));
        }
        let m = inducing.rows();
        let mut model = Self {
            log_variance: Tensor::new(&[1, 1], vec![kernel.variance.ln()])?.with_grad(),
            log_lengthscales: Tensor::new(
                &[1, kernel.dim()],
                kernel.lengthscales.iter().map(|l| l.ln()).collect(),
            )?
            .with_grad(),
            inducing: Tensor::from_mat(&inducing).with_grad(),
            q_mean: Tensor::zeros(&[m, 1]).with_grad(),
            q_chol_raw: Tensor::zeros(&[m, m]).with_grad(),
            log_noise_variance: Tensor::new(&[1, 1], vec![noise_variance.ln()])?.with_grad(),
            num_mc_samples: 1,
            output: OutputTransform::default(),
        };
        model.reset_q_to_prior()?;
        Ok(model)
    }

    /// Assembles a model from stored parameters.
    pub fn from_parts(
        kernel: SqExpArdKernel,
        inducing: Mat,
        noise_variance: f64,
        q_mean: Vec<f64>,
        q_chol: Mat,
        num_mc_samples: usize,
        output: OutputTransform,
    ) -> Result<Self> {
        let mut model = Self::new(kernel, inducing, noise_variance)?;
        model.set_q(&q_mean, &q_chol)?;
        model.num_mc_samples = num_mc_samples.max(1);
        model.output = output;
        Ok(model)
    }

    pub fn latent_dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    pub fn num_inducing(&self) -> usize {
        self.q_mean.len()
    }

    pub fn kernel(&self) -> SqExpArdKernel {
        SqExpArdKernel {
            variance: self.log_variance.item().exp(),
            lengthscales: self.log_lengthscales.data().iter().map(|v| v.exp()).collect(),
        }
    }

    pub fn set_kernel(&mut self, kernel: &SqExpArdKernel) -> Result<()> {
        kernel.validate()?;
        if kernel.dim() != self.latent_dim() {
            return Err(Error::DimensionMismatch {
                context: "kernel lengthscales",
                expected: self.latent_dim(),
                got: kernel.dim(),
            });
        }
        self.log_variance.data_mut()[0] = kernel.variance.ln();
        for (d, l) in self
            .log_lengthscales
            .data_mut()
            .iter_mut()
            .zip(&kernel.lengthscales)
        {
            *d = l.ln();
        }
        Ok(())
    }

    pub fn noise_variance(&self) -> f64 {
        self.log_noise_variance.item().exp()
    }

    pub fn set_noise_variance(&mut self, v: f64) -> Result<()> {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidParameter(alloc::format!(
                "noise variance must be positive, got {v}"
            )));
        }
        self.log_noise_variance.data_mut()[0] = v.ln();
        Ok(())
    }

    pub fn inducing(&self) -> Mat {
        self.inducing.to_mat()
    }

    pub fn set_inducing(&mut self, z: &Mat) -> Result<()> {
        if z.shape() != self.inducing.dims2() {
            return Err(Error::DimensionMismatch {
                context: "inducing inputs",
                expected: self.inducing.len(),
                got: z.len(),
            });
        }
        self.inducing.data_mut().copy_from_slice(z.data());
        Ok(())
    }

    pub fn q_mean(&self) -> &[f64] {
        self.q_mean.data()
    }

    /// Lower-triangular `L` with `S = LᵀL`.
    pub fn q_chol(&self) -> Mat {
        lower_from_raw(&self.q_chol_raw.to_mat())
    }

    pub fn q_cov(&self) -> Mat {
        let l = self.q_chol();
        l.matmul_tn(&l)
    }

    pub fn set_q(&mut self, mean: &[f64], chol: &Mat) -> Result<()> {
        let m = self.num_inducing();
        if mean.len() != m || chol.shape() != (m, m) {
            return Err(Error::DimensionMismatch {
                context: "q(u) parameters",
                expected: m,
                got: mean.len(),
            });
        }
        let raw = raw_from_lower(chol)?;
        self.q_mean.data_mut().copy_from_slice(mean);
        self.q_chol_raw.data_mut().copy_from_slice(raw.data());
        Ok(())
    }

    /// Sets `q(u) = N(mean, cov)`.
    pub fn set_q_cov(&mut self, mean: &[f64], cov: &Mat) -> Result<()> {
        let l = reverse_cholesky(cov)?;
        self.set_q(mean, &l)
    }

    pub fn reset_q_to_prior(&mut self) -> Result<()> {
        let kuu = self.kuu()?;
        let m = vec![0.0; self.num_inducing()];
        self.set_q_cov(&m, &kuu)
    }

    pub fn output_transform(&self) -> OutputTransform {
        self.output
    }

    pub fn set_output_transform(&mut self, t: OutputTransform) {
        self.output = t;
    }

    pub fn params(&self) -> [&Tensor; 6] {
        [
            &self.log_variance,
            &self.log_lengthscales,
            &self.log_noise_variance,
            &self.inducing,
            &self.q_mean,
            &self.q_chol_raw,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.log_variance,
            &mut self.log_lengthscales,
            &mut self.log_noise_variance,
            &mut self.inducing,
            &mut self.q_mean,
            &mut self.q_chol_raw,
        ]
    }

    /// Kernel hyperparameters, noise and inducing inputs.
    pub fn hyper_params_mut(&mut self) -> [&mut Tensor; 4] {
        [
            &mut self.log_variance,
            &mut self.log_lengthscales,
            &mut self.log_noise_variance,
            &mut self.inducing,
        ]
    }

    /// Pulls hyperparameters back into their admissible ranges.
    pub fn clamp_hyperparameters(&mut self) {
        let clamp = |v: &mut f64, (lo, hi): (f64, f64)| {
            *v = v.max(lo.ln()).min(hi.ln());
        };
        clamp(&mut self.log_variance.data_mut()[0], SIGNAL_VARIANCE_RANGE);
        for v in self.log_lengthscales.data_mut() {
            clamp(v, LENGTHSCALE_RANGE);
        }
        let v = &mut self.log_noise_variance.data_mut()[0];
        *v = v.max(NOISE_VARIANCE_FLOOR.ln());
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.params() {
            for v in t.data() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    fn kuu(&self) -> Result<Mat> {
        let k = self.kernel();
        let z = self.inducing();
        let mut kuu = k.eval(&z, &z)?;
        kuu.add_diag(INDUCING_JITTER * k.variance);
        Ok(kuu)
    }

    pub fn register(&self, g: &mut Graph) -> GpVars {
        GpVars {
            log_variance: g.param(&self.log_variance),
            log_lengthscales: g.param(&self.log_lengthscales),
            log_noise_variance: g.param(&self.log_noise_variance),
            inducing: g.param(&self.inducing),
            q_mean: g.param(&self.q_mean),
            q_chol_raw: g.param(&self.q_chol_raw),
        }
    }

    /// Like [`GplvmModel::register`] with `q(u)` held constant.
    pub fn register_hyperparameters(&self, g: &mut Graph) -> GpVars {
        GpVars {
            log_variance: g.param(&self.log_variance),
            log_lengthscales: g.param(&self.log_lengthscales),
            log_noise_variance: g.param(&self.log_noise_variance),
            inducing: g.param(&self.inducing),
            q_mean: g.constant(self.q_mean.to_mat()),
            q_chol_raw: g.constant(self.q_chol_raw.to_mat()),
        }
    }

    /// Sparse variational bound for inputs `z` (`n x d`) and targets `y`
    /// (`n x 1`, already in fitted units).
    pub fn elbo_graph(&self, g: &mut Graph, v: &GpVars, z: Var, y: Var) -> Result<GpElboGraph> {
        let n = g.value(z).rows() as f64;
        let m = self.num_inducing();
        let sv = g.exp(v.log_variance);
        let neg_ls = g.neg(v.log_lengthscales);
        let inv_ls = g.exp(neg_ls);
        let us = g.mul_row(v.inducing, inv_ls);
        let zs = g.mul_row(z, inv_ls);

        let duu = g.sq_dist(us, us);
        let euu = g.scale(duu, -0.5);
        let euu = g.exp(euu);
        let mut jit = Mat::zeros(m, m);
        jit.add_diag(INDUCING_JITTER);
        let jit = g.constant(jit);
        let euu = g.add(euu, jit);
        let kuu = g.mul_scalar(euu, sv);

        let duf = g.sq_dist(us, zs);
        let euf = g.scale(duf, -0.5);
        let euf = g.exp(euf);
        let kuf = g.mul_scalar(euf, sv);

        let lk = g.cholesky(kuu)?;
        let vm = g.solve_lower(lk, kuf);
        let at = g.solve_lower_t(lk, vm);
        let att = g.transpose(at);
        let mean = g.matmul(att, v.q_mean);
        let l = g.lower_from_raw(v.q_chol_raw);
        let w = g.matmul(l, at);

        // Σᵢ [(yᵢ − μᵢ)² + varᵢ], varᵢ = k(z,z) − ‖Vᵢ‖² + ‖Wᵢ‖²
        let resid = g.sub(y, mean);
        let resid = g.square(resid);
        let resid = g.sum(resid);
        let v2 = g.square(vm);
        let v2 = g.sum(v2);
        let w2 = g.square(w);
        let w2 = g.sum(w2);
        let trace = g.scale(sv, n);
        let spread = g.sub(trace, v2);
        let spread = g.add(spread, w2);
        let total = g.add(resid, spread);
        let neg_ln_noise = g.neg(v.log_noise_variance);
        let inv_noise = g.exp(neg_ln_noise);
        let quad = g.mul_scalar(total, inv_noise);
        let quad = g.scale(quad, -0.5);
        let norm = g.scale(v.log_noise_variance, -0.5 * n);
        let ell = g.add(quad, norm);
        let ell = g.add_scalar(ell, -0.5 * n * LN_2PI);

        // KL(N(m, LᵀL) ‖ N(0, K_uu))
        let lt = g.transpose(l);
        let x = g.solve_lower(lk, lt);
        let x = g.square(x);
        let tr = g.sum(x);
        let a = g.solve_lower(lk, v.q_mean);
        let a = g.square(a);
        let maha = g.sum(a);
        let dk = g.diag(lk);
        let dk = g.ln(dk);
        let logdet_k = g.sum(dk);
        let draw = g.diag(v.q_chol_raw);
        let logdet_s = g.sum(draw);
        let kl = g.add(tr, maha);
        let ld = g.sub(logdet_k, logdet_s);
        let ld = g.scale(ld, 2.0);
        let kl = g.add(kl, ld);
        let kl = g.add_scalar(kl, -(m as f64));
        let kl = g.scale(kl, 0.5);

        let elbo = g.sub(ell, kl);
        Ok(GpElboGraph {
            elbo,
            expected_log_lik: ell,
            kl,
        })
    }

    fn fitted_targets(&self, y: &[f64]) -> Mat {
        Mat::column(&y.iter().map(|v| self.output.forward(*v)).collect::<Vec<_>>())
    }

    fn check_data(&self, z: &Mat, y: &[f64]) -> Result<()> {
        if z.rows() == 0 {
            return Err(Error::InsufficientData("elbo needs at least one point".into()));
        }
        if z.cols() != self.latent_dim() {
            return Err(Error::DimensionMismatch {
                context: "gp inputs",
                expected: self.latent_dim(),
                got: z.cols(),
            });
        }
        if y.len() != z.rows() {
            return Err(Error::DimensionMismatch {
                context: "gp targets",
                expected: z.rows(),
                got: y.len(),
            });
        }
        Ok(())
    }

    /// Sparse variational bound at deterministic inputs.
    pub fn svgp_elbo(&self, z: &Mat, y: &[f64]) -> Result<f64> {
        self.check_data(z, y)?;
        let mut g = Graph::new();
        let v = self.register(&mut g);
        let zv = g.constant(z.clone());
        let yv = g.constant(self.fitted_targets(y));
        let e = self.elbo_graph(&mut g, &v, zv, yv)?;
        g.check_finite()?;
        Ok(g.scalar(e.elbo))
    }

    /// GPLVM bound: the sparse bound averaged over `num_mc_samples`
    /// reparameterized draws of the inputs from their encodings.
    pub fn gplvm_elbo<R: Rng + ?Sized>(
        &self,
        encodings: &[EncodedDistribution],
        y: &[f64],
        rng: &mut R,
    ) -> Result<f64> {
        let d = self.latent_dim();
        let n = encodings.len();
        let mut means = Mat::zeros(n, d);
        let mut vars = Mat::zeros(n, d);
        for (i, e) in encodings.iter().enumerate() {
            if e.mean.len() != d || e.diag_variance.len() != d {
                return Err(Error::DimensionMismatch {
                    context: "encoding",
                    expected: d,
                    got: e.mean.len(),
                });
            }
            means.row_slice_mut(i).copy_from_slice(&e.mean);
            vars.row_slice_mut(i).copy_from_slice(&e.diag_variance);
        }
        self.gplvm_elbo_mat(&means, &vars, y, rng)
    }

    pub fn gplvm_elbo_mat<R: Rng + ?Sized>(
        &self,
        means: &Mat,
        vars: &Mat,
        y: &[f64],
        rng: &mut R,
    ) -> Result<f64> {
        self.check_data(means, y)?;
        let s = self.num_mc_samples.max(1);
        let mut total = 0.0;
        for _ in 0..s {
            let z = sample_inputs(means, vars, rng);
            total += self.svgp_elbo(&z, y)?;
        }
        Ok(total / s as f64)
    }

    /// Optimal `q(u)` for fixed hyperparameters and inputs:
    /// `S = K(K + σ⁻²K_uf K_fu)⁻¹K`, `m = σ⁻² S K⁻¹ K_uf y`.
    pub fn set_optimal_q(&mut self, z: &Mat, y: &[f64]) -> Result<()> {
        self.check_data(z, y)?;
        let k = self.kernel();
        let kuu = self.kuu()?;
        let kuf = k.eval(&self.inducing(), z)?;
        let s2 = self.noise_variance();
        let lk = cholesky(&kuu)?;
        // B = I + σ⁻² Lk⁻¹ K_uf K_fu Lk⁻ᵀ
        let p = solve_lower(&lk, &kuf);
        let mut b = p.matmul_nt(&p).scale(1.0 / s2);
        b.add_diag(1.0);
        let lb = cholesky(&b)?;
        // S = C Cᵀ with C = Lk LB⁻ᵀ
        let c = solve_lower(&lb, &lk.transpose()).transpose();
        let s = c.matmul_nt(&c);
        // m = σ⁻² Lk B⁻¹ P y
        let yt = self.fitted_targets(y);
        let py = p.matmul(&yt);
        let binv_py = solve_lower_transpose(&lb, &solve_lower(&lb, &py));
        let m = lk.matmul(&binv_py).scale(1.0 / s2);
        self.set_q_cov(m.data(), &s)
    }

    pub fn predictor(&self) -> Result<Predictor> {
        let kuu = self.kuu()?;
        Ok(Predictor {
            kernel: self.kernel(),
            inducing: self.inducing(),
            lk: cholesky(&kuu)?,
            q_mean: Mat::column(self.q_mean.data()),
            q_chol: self.q_chol(),
            output: self.output,
        })
    }

    pub fn predict(&self, z: &[f64]) -> Result<PredictiveGaussian> {
        self.predictor()?.predict(z)
    }

    /// One joint draw of the latent function over the rows of `zs`.
    pub fn posterior_sample_on_set<R: Rng + ?Sized>(&self, zs: &Mat, rng: &mut R) -> Result<Vec<f64>> {
        self.predictor()?.sample_joint(zs, rng)
    }
}

/// `means + sqrt(vars) ⊙ ε` with fresh standard normal `ε`.
pub fn sample_inputs<R: Rng + ?Sized>(means: &Mat, vars: &Mat, rng: &mut R) -> Mat {
    Mat::from_fn(means.rows(), means.cols(), |i, j| {
        let e: f64 = StandardNormal.sample(rng);
        means[(i, j)] + vars[(i, j)].max(0.0).sqrt() * e
    })
}

/// Frozen factorization of a fitted model for repeated predictions.
#[derive(Clone, Debug)]
pub struct Predictor {
    kernel: SqExpArdKernel,
    inducing: Mat,
    lk: Mat,
    q_mean: Mat,
    q_chol: Mat,
    output: OutputTransform,
}

impl Predictor {
    /// `(V, W, mean)` with `V = Lk⁻¹K_uf`, `W = L K_uu⁻¹ K_uf`, in fitted units.
    fn parts(&self, z: &Mat) -> Result<(Mat, Mat, Mat)> {
        let kuf = self.kernel.eval(&self.inducing, z)?;
        let v = solve_lower(&self.lk, &kuf);
        let at = solve_lower_transpose(&self.lk, &v);
        let mean = at.matmul_tn(&self.q_mean);
        let w = self.q_chol.matmul(&at);
        Ok((v, w, mean))
    }

    pub fn predict_batch(&self, z: &Mat) -> Result<Vec<PredictiveGaussian>> {
        let (v, w, mean) = self.parts(z)?;
        let v2 = col_sum_sq(&v);
        let w2 = col_sum_sq(&w);
        let s = self.output.scale;
        Ok((0..z.rows())
            .map(|i| {
                let var = (self.kernel.variance - v2[i] + w2[i]).max(VARIANCE_FLOOR);
                PredictiveGaussian {
                    mean: self.output.inverse(mean[(i, 0)]),
                    variance: (s * s * var).max(VARIANCE_FLOOR),
                }
            })
            .collect())
    }

    pub fn predict(&self, z: &[f64]) -> Result<PredictiveGaussian> {
        Ok(self.predict_batch(&Mat::row(z))?[0])
    }

    /// Joint predictive mean and covariance over the rows of `z`.
    pub fn joint(&self, z: &Mat) -> Result<(Vec<f64>, Mat)> {
        let (v, w, mean) = self.parts(z)?;
        let kff = self.kernel.eval(z, z)?;
        let s2 = self.output.scale * self.output.scale;
        let vtv = v.matmul_tn(&v);
        let wtw = w.matmul_tn(&w);
        let cov = Mat::from_fn(z.rows(), z.rows(), |i, j| {
            s2 * (kff[(i, j)] - vtv[(i, j)] + wtw[(i, j)])
        });
        let mean = mean.data().iter().map(|f| self.output.inverse(*f)).collect();
        Ok((mean, cov))
    }

    pub fn sample_joint<R: Rng + ?Sized>(&self, z: &Mat, rng: &mut R) -> Result<Vec<f64>> {
        let (mean, cov) = self.joint(z)?;
        let l = cholesky(&cov)?;
        let eps: Vec<f64> = (0..z.rows()).map(|_| StandardNormal.sample(rng)).collect();
        Ok((0..z.rows())
            .map(|i| mean[i] + linalg::dot(&l.row_slice(i)[..=i], &eps[..=i]))
            .collect())
    }
}

/// k-means++ seeding: `m` rows of `points`, the first uniformly, each next
/// with probability proportional to its squared distance to the chosen set.
/// Returns every row when `m >= points.rows()`.
pub fn kmeanspp_seed<R: Rng + ?Sized>(points: &Mat, m: usize, rng: &mut R) -> Mat {
    let n = points.rows();
    if m >= n {
        return points.clone();
    }
    let dist = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum() };
    let mut chosen = Vec::with_capacity(m);
    let first = rng.random_range(0..n);
    chosen.push(first);
    let mut d2: Vec<f64> = (0..n)
        .map(|i| dist(points.row_slice(i), points.row_slice(first)))
        .collect();
    while chosen.len() < m {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            // all remaining points coincide with chosen ones
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, slot) in d2.iter_mut().enumerate() {
            let d = dist(points.row_slice(i), points.row_slice(next));
            if d < *slot {
                *slot = d;
            }
        }
    }
    points.select_rows(&chosen)
}
