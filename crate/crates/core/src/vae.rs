//! Variational auto-encoder with a diagonal Gaussian encoder, a Bernoulli,
//! continuous-Bernoulli or Gaussian decoder, and a standard normal prior.
//!
//! Both networks have one hidden layer the width of the input:
//! the encoder maps `input_dim -> input_dim -> 2 * latent_dim` (mean and
//! log-variance halves) and the decoder maps `latent_dim -> input_dim ->
//! input_dim`.

use alloc::vec::Vec;

#[allow(unused_imports)] // std float methods shadow these in test builds
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::ndcore::{Graph, Mat, Tensor, Var};

/// Encoder log-variances are clamped to `[-LOGVAR_BOUND, LOGVAR_BOUND]`.
pub const LOGVAR_BOUND: f64 = 10.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Likelihood {
    Bernoulli,
    ContinuousBernoulli,
    Gaussian,
}

impl Likelihood {
    pub fn name(self) -> &'static str {
        match self {
            Likelihood::Bernoulli => "bernoulli",
            Likelihood::ContinuousBernoulli => "continuous_bernoulli",
            Likelihood::Gaussian => "gaussian",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "bernoulli" => Some(Likelihood::Bernoulli),
            "continuous_bernoulli" => Some(Likelihood::ContinuousBernoulli),
            "gaussian" => Some(Likelihood::Gaussian),
            _ => None,
        }
    }
}

/// Hidden-layer activation. `Identity` exists for linear models.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }

    fn apply(self, m: &mut Mat) {
        if let Activation::Tanh = self {
            for v in m.data_mut() {
                *v = v.tanh();
            }
        }
    }
}

/// Fully connected layer, `y = x W + b` with `W` stored `fan_in x fan_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite glorot limit");
        let w: Vec<f64> = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
        Self {
            weight: Tensor::new(&[fan_in, fan_out], w).expect("glorot shape").with_grad(),
            bias: Tensor::zeros(&[1, fan_out]).with_grad(),
        }
    }

    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[fan_in, fan_out]).with_grad(),
            bias: Tensor::zeros(&[1, fan_out]).with_grad(),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.dims2().0
    }

    pub fn fan_out(&self) -> usize {
        self.weight.dims2().1
    }

    fn forward(&self, x: &Mat) -> Mat {
        let mut out = x.matmul(&self.weight.to_mat());
        let b = self.bias.data();
        for i in 0..out.rows() {
            for (v, bi) in out.row_slice_mut(i).iter_mut().zip(b) {
                *v += bi;
            }
        }
        out
    }
}

/// `q(z|x) = N(mean, diag(diag_variance))`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedDistribution {
    pub mean: Vec<f64>,
    pub diag_variance: Vec<f64>,
}

/// Decoder output: success probabilities for the Bernoulli likelihoods, the
/// mean for the Gaussian one (which also reports its global log noise).
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub mean: Vec<f64>,
    pub log_noise: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel {
    input_dim: usize,
    latent_dim: usize,
    likelihood: Likelihood,
    activation: Activation,
    encoder: [Dense; 2],
    decoder: [Dense; 2],
    log_noise: Tensor,
}

/// Graph handles of the VAE parameters, in [`VaeModel::params_mut`] order.
#[derive(Clone, Copy, Debug)]
pub struct VaeVars {
    encoder: [(Var, Var); 2],
    decoder: [(Var, Var); 2],
    log_noise: Var,
}

impl VaeVars {
    pub fn all(&self) -> [Var; 9] {
        [
            self.encoder[0].0,
            self.encoder[0].1,
            self.encoder[1].0,
            self.encoder[1].1,
            self.decoder[0].0,
            self.decoder[0].1,
            self.decoder[1].0,
            self.decoder[1].1,
            self.log_noise,
        ]
    }
}

/// Batch ELBO pieces, each summed over the rows of the batch.
#[derive(Clone, Copy, Debug)]
pub struct ElboGraph {
    pub elbo: Var,
    pub reconstruction: Var,
    pub kl: Var,
    pub z: Var,
}

fn check_dims(input_dim: usize, latent_dim: usize) -> Result<()> {
    if latent_dim == 0 || input_dim <= latent_dim {
        return Err(Error::InvalidParameter(alloc::format!(
            "vae needs 0 < latent_dim < input_dim, got latent {latent_dim}, input {input_dim}"
        )));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl VaeModel {
    /// Glorot-initialized model with tanh hidden activations.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        latent_dim: usize,
        likelihood: Likelihood,
        rng: &mut R,
    ) -> Result<Self> {
        check_dims(input_dim, latent_dim)?;
        let encoder = [
            Dense::glorot(input_dim, input_dim, rng),
            Dense::glorot(input_dim, 2 * latent_dim, rng),
        ];
        let decoder = [
            Dense::glorot(latent_dim, input_dim, rng),
            Dense::glorot(input_dim, input_dim, rng),
        ];
        Ok(Self {
            input_dim,
            latent_dim,
            likelihood,
            activation: Activation::Tanh,
            encoder,
            decoder,
            log_noise: Tensor::zeros(&[1, 1]).with_grad(),
        })
    }

    /// All weights and biases zero.
    pub fn zeroed(input_dim: usize, latent_dim: usize, likelihood: Likelihood) -> Result<Self> {
        check_dims(input_dim, latent_dim)?;
        Ok(Self {
            input_dim,
            latent_dim,
            likelihood,
            activation: Activation::Tanh,
            encoder: [
                Dense::zeros(input_dim, input_dim),
                Dense::zeros(input_dim, 2 * latent_dim),
            ],
            decoder: [
                Dense::zeros(latent_dim, input_dim),
                Dense::zeros(input_dim, input_dim),
            ],
            log_noise: Tensor::zeros(&[1, 1]).with_grad(),
        })
    }

    /// Linear Gaussian auto-encoder that embeds `z` into the first
    /// `latent_dim` coordinates and reads them back. The encoder variance is
    /// pinned at the lower clamp, so `roundtrip_mean(z) == z`.
    pub fn identity_embedding(input_dim: usize, latent_dim: usize) -> Result<Self> {
        let mut m = Self::zeroed(input_dim, latent_dim, Likelihood::Gaussian)?;
        m.activation = Activation::Identity;
        let d = latent_dim;
        let n = input_dim;
        let set = |t: &mut Tensor, cols: usize, i: usize, j: usize, v: f64| {
            t.data_mut()[i * cols + j] = v;
        };
        for i in 0..n {
            set(&mut m.encoder[0].weight, n, i, i, 1.0);
            set(&mut m.decoder[1].weight, n, i, i, 1.0);
        }
        for i in 0..d {
            set(&mut m.encoder[1].weight, 2 * d, i, i, 1.0);
            set(&mut m.decoder[0].weight, n, i, i, 1.0);
            m.encoder[1].bias.data_mut()[d + i] = -LOGVAR_BOUND;
        }
        Ok(m)
    }

    /// Assembles a model from stored layers, validating every shape.
    pub fn from_parts(
        likelihood: Likelihood,
        activation: Activation,
        encoder: [Dense; 2],
        decoder: [Dense; 2],
        log_noise: Tensor,
    ) -> Result<Self> {
        let input_dim = encoder[0].fan_in();
        let latent_dim = decoder[0].fan_in();
        check_dims(input_dim, latent_dim)?;
        let expect = [
            (&encoder[0], input_dim, input_dim),
            (&encoder[1], input_dim, 2 * latent_dim),
            (&decoder[0], latent_dim, input_dim),
            (&decoder[1], input_dim, input_dim),
        ];
        for (layer, fi, fo) in expect {
            if layer.weight.dims2() != (fi, fo) {
                return Err(Error::DimensionMismatch {
                    context: "vae layer weight",
                    expected: fi * fo,
                    got: layer.weight.len(),
                });
            }
            if layer.bias.len() != fo {
                return Err(Error::DimensionMismatch {
                    context: "vae layer bias",
                    expected: fo,
                    got: layer.bias.len(),
                });
            }
        }
        if log_noise.len() != 1 {
            return Err(Error::DimensionMismatch {
                context: "vae log noise",
                expected: 1,
                got: log_noise.len(),
            });
        }
        Ok(Self {
            input_dim,
            latent_dim,
            likelihood,
            activation,
            encoder,
            decoder,
            log_noise,
        })
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn likelihood(&self) -> Likelihood {
        self.likelihood
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn encoder_layers(&self) -> &[Dense; 2] {
        &self.encoder
    }

    pub fn decoder_layers(&self) -> &[Dense; 2] {
        &self.decoder
    }

    pub fn encoder_layers_mut(&mut self) -> &mut [Dense; 2] {
        &mut self.encoder
    }

    pub fn decoder_layers_mut(&mut self) -> &mut [Dense; 2] {
        &mut self.decoder
    }

    pub fn log_noise(&self) -> &Tensor {
        &self.log_noise
    }

    pub fn log_noise_mut(&mut self) -> &mut Tensor {
        &mut self.log_noise
    }

    pub fn params(&self) -> [&Tensor; 9] {
        let [e0, e1] = &self.encoder;
        let [d0, d1] = &self.decoder;
        [
            &e0.weight,
            &e0.bias,
            &e1.weight,
            &e1.bias,
            &d0.weight,
            &d0.bias,
            &d1.weight,
            &d1.bias,
            &self.log_noise,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 9] {
        let [e0, e1] = &mut self.encoder;
        let [d0, d1] = &mut self.decoder;
        [
            &mut e0.weight,
            &mut e0.bias,
            &mut e1.weight,
            &mut e1.bias,
            &mut d0.weight,
            &mut d0.bias,
            &mut d1.weight,
            &mut d1.bias,
            &mut self.log_noise,
        ]
    }

    /// FNV-1a over the bit patterns of every parameter.
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

    fn check_input(&self, x: &Mat) -> Result<()> {
        if x.cols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                context: "vae input",
                expected: self.input_dim,
                got: x.cols(),
            });
        }
        Ok(())
    }

    fn check_latent(&self, z: &Mat) -> Result<()> {
        if z.cols() != self.latent_dim {
            return Err(Error::DimensionMismatch {
                context: "vae latent",
                expected: self.latent_dim,
                got: z.cols(),
            });
        }
        Ok(())
    }

    /// Means and variances of `q(z|x)` for every row of `x`.
    pub fn encode_batch(&self, x: &Mat) -> Result<(Mat, Mat)> {
        self.check_input(x)?;
        let mut h = self.encoder[0].forward(x);
        self.activation.apply(&mut h);
        let out = self.encoder[1].forward(&h);
        let d = self.latent_dim;
        let mean = Mat::from_fn(x.rows(), d, |i, j| out[(i, j)]);
        let var = Mat::from_fn(x.rows(), d, |i, j| {
            out[(i, d + j)].max(-LOGVAR_BOUND).min(LOGVAR_BOUND).exp()
        });
        if !mean.is_finite() || !var.is_finite() {
            return Err(Error::NonFinite {
                op: "vae encode",
                node: 0,
            });
        }
        Ok((mean, var))
    }

    pub fn encode(&self, x: &[f64]) -> Result<EncodedDistribution> {
        let (mean, var) = self.encode_batch(&Mat::row(x))?;
        Ok(EncodedDistribution {
            mean: mean.into_vec(),
            diag_variance: var.into_vec(),
        })
    }

    fn decoder_output(&self, z: &Mat) -> Result<Mat> {
        self.check_latent(z)?;
        let mut h = self.decoder[0].forward(z);
        self.activation.apply(&mut h);
        let out = self.decoder[1].forward(&h);
        if !out.is_finite() {
            return Err(Error::NonFinite {
                op: "vae decode",
                node: 0,
            });
        }
        Ok(out)
    }

    /// Decoded means (probabilities for the Bernoulli likelihoods) for every
    /// row of `z`.
    pub fn decode_mean_batch(&self, z: &Mat) -> Result<Mat> {
        let out = self.decoder_output(z)?;
        Ok(match self.likelihood {
            Likelihood::Bernoulli | Likelihood::ContinuousBernoulli => out.map(sigmoid),
            Likelihood::Gaussian => out,
        })
    }

    pub fn decode(&self, z: &[f64]) -> Result<Decoded> {
        let mean = self.decode_mean_batch(&Mat::row(z))?.into_vec();
        let log_noise = match self.likelihood {
            Likelihood::Gaussian => Some(self.log_noise.item()),
            _ => None,
        };
        Ok(Decoded { mean, log_noise })
    }

    pub fn decode_mean(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.decode_mean_batch(&Mat::row(z))?.into_vec())
    }

    /// Encoder mean of the decoded mean, row by row.
    pub fn roundtrip_batch(&self, z: &Mat) -> Result<Mat> {
        let x = self.decode_mean_batch(z)?;
        Ok(self.encode_batch(&x)?.0)
    }

    pub fn roundtrip_mean(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.roundtrip_batch(&Mat::row(z))?.into_vec())
    }

    /// `‖z − roundtrip_mean(z)‖₂` for every row of `z`.
    pub fn roundtrip_distances(&self, z: &Mat) -> Result<Vec<f64>> {
        let back = self.roundtrip_batch(z)?;
        Ok((0..z.rows())
            .map(|i| {
                z.row_slice(i)
                    .iter()
                    .zip(back.row_slice(i))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect())
    }

    /// Registers every parameter on `g`.
    pub fn register(&self, g: &mut Graph) -> VaeVars {
        let layer = |g: &mut Graph, d: &Dense| (g.param(&d.weight), g.param(&d.bias));
        VaeVars {
            encoder: [layer(g, &self.encoder[0]), layer(g, &self.encoder[1])],
            decoder: [layer(g, &self.decoder[0]), layer(g, &self.decoder[1])],
            log_noise: g.param(&self.log_noise),
        }
    }

    fn hidden(&self, g: &mut Graph, h: Var) -> Var {
        match self.activation {
            Activation::Tanh => g.tanh(h),
            Activation::Identity => h,
        }
    }

    /// Encoder on the graph: returns `(mean, clamped log-variance)`.
    pub fn encoder_graph(&self, g: &mut Graph, vars: &VaeVars, x: Var) -> (Var, Var) {
        let [(w0, b0), (w1, b1)] = vars.encoder;
        let h = g.matmul(x, w0);
        let h = g.add_row(h, b0);
        let h = self.hidden(g, h);
        let out = g.matmul(h, w1);
        let out = g.add_row(out, b1);
        let d = self.latent_dim;
        let mean = g.slice_cols(out, 0, d);
        let logvar = g.slice_cols(out, d, d);
        let logvar = g.clamp(logvar, -LOGVAR_BOUND, LOGVAR_BOUND);
        (mean, logvar)
    }

    /// Decoder on the graph: logits for the Bernoulli likelihoods, means for
    /// the Gaussian one.
    pub fn decoder_graph(&self, g: &mut Graph, vars: &VaeVars, z: Var) -> Var {
        let [(w0, b0), (w1, b1)] = vars.decoder;
        let h = g.matmul(z, w0);
        let h = g.add_row(h, b0);
        let h = self.hidden(g, h);
        let out = g.matmul(h, w1);
        g.add_row(out, b1)
    }

    /// `Σ log p(x | decoder output)` over a batch.
    pub fn log_likelihood_graph(&self, g: &mut Graph, vars: &VaeVars, x: Var, out: Var) -> Var {
        match self.likelihood {
            Likelihood::Bernoulli | Likelihood::ContinuousBernoulli => {
                // x·l − softplus(l), plus the normalizer for the continuous case.
                let xl = g.mul(x, out);
                let sp = g.softplus(out);
                let mut ll = g.sub(xl, sp);
                if self.likelihood == Likelihood::ContinuousBernoulli {
                    let norm = g.cb_log_norm(out);
                    ll = g.add(ll, norm);
                }
                g.sum(ll)
            }
            Likelihood::Gaussian => {
                let count = g.value(x).len() as f64;
                let diff = g.sub(x, out);
                let sq = g.square(diff);
                let sq_sum = g.sum(sq);
                let neg2 = g.scale(vars.log_noise, -2.0);
                let inv_var = g.exp(neg2);
                let quad = g.mul_scalar(sq_sum, inv_var);
                let quad = g.scale(quad, -0.5);
                let norm = g.scale(vars.log_noise, -count);
                let ll = g.add(quad, norm);
                g.add_scalar(ll, -count * HALF_LN_2PI)
            }
        }
    }

    /// Closed-form `Σ KL(N(mean, exp(logvar)) ‖ N(0, I))`.
    pub fn kl_graph(g: &mut Graph, mean: Var, logvar: Var) -> Var {
        let var = g.exp(logvar);
        let m2 = g.square(mean);
        let t = g.add(var, m2);
        let t = g.sub(t, logvar);
        let t = g.add_scalar(t, -1.0);
        let s = g.sum(t);
        g.scale(s, 0.5)
    }

    /// Single-sample reparameterized ELBO of a batch with fixed noise `eps`
    /// (`batch x latent_dim`).
    pub fn elbo_graph(&self, g: &mut Graph, vars: &VaeVars, x: Var, eps: Var) -> ElboGraph {
        let (mean, logvar) = self.encoder_graph(g, vars, x);
        let half = g.scale(logvar, 0.5);
        let std = g.exp(half);
        let noise = g.mul(std, eps);
        let z = g.add(mean, noise);
        let out = self.decoder_graph(g, vars, z);
        let reconstruction = self.log_likelihood_graph(g, vars, x, out);
        let kl = Self::kl_graph(g, mean, logvar);
        let elbo = g.sub(reconstruction, kl);
        ElboGraph {
            elbo,
            reconstruction,
            kl,
            z,
        }
    }

    /// ELBO of a batch (summed over rows) with explicit reparameterization
    /// noise.
    pub fn elbo_batch_with_noise(&self, x: &Mat, eps: &Mat) -> Result<ElboTerms> {
        self.check_input(x)?;
        if eps.shape() != (x.rows(), self.latent_dim) {
            return Err(Error::DimensionMismatch {
                context: "vae elbo noise",
                expected: x.rows() * self.latent_dim,
                got: eps.len(),
            });
        }
        let mut g = Graph::new();
        let vars = self.register(&mut g);
        let xv = g.constant(x.clone());
        let ev = g.constant(eps.clone());
        let e = self.elbo_graph(&mut g, &vars, xv, ev);
        g.check_finite()?;
        Ok(ElboTerms {
            elbo: g.scalar(e.elbo),
            reconstruction: g.scalar(e.reconstruction),
            kl: g.scalar(e.kl),
        })
    }

    pub fn elbo_with_noise(&self, x: &[f64], eps: &[f64]) -> Result<f64> {
        Ok(self
            .elbo_batch_with_noise(&Mat::row(x), &Mat::row(eps))?
            .elbo)
    }

    /// Single-sample ELBO estimate for one input.
    pub fn elbo<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<f64> {
        let eps = standard_normal_mat(1, self.latent_dim, rng);
        self.elbo_with_noise(x, eps.data())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboTerms {
    pub elbo: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

pub fn standard_normal_mat<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}
