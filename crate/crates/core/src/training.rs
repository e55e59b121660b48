//! Disjoint and joint training of the VAE and the GPLVM surrogate.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gp::{sample_inputs, GpVars, GplvmModel, OutputTransform, SqExpArdKernel};
use crate::ndcore::{adam_step, AdamState, Graph, Mat, Tensor, Var};
use crate::vae::{standard_normal_mat, ElboGraph, VaeModel, VaeVars};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Disjoint,
    Joint,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Disjoint => "disjoint",
            Regime::Joint => "joint",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "disjoint" => Some(Regime::Disjoint),
            "joint" => Some(Regime::Joint),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub vae_lr: f64,
    pub gp_lr: f64,
    /// Passes over the unlabelled data when the VAE is first fitted.
    pub vae_epochs: usize,
    /// Adam steps on the GP hyperparameters per fit.
    pub gp_steps: usize,
    /// Unlabelled/labelled step pairs per joint retrain.
    pub joint_steps: usize,
    pub batch_size: usize,
    pub retrain_period: usize,
    pub seed: u64,
    /// Keep kernel hyperparameters between fits instead of resetting them.
    pub warm_start: bool,
    pub num_inducing: usize,
    pub gp_mc_samples: usize,
    pub initial_noise_variance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            vae_lr: 1e-3,
            gp_lr: 1e-1,
            vae_epochs: 20,
            gp_steps: 20,
            joint_steps: 100,
            batch_size: 64,
            retrain_period: 10,
            seed: 0,
            warm_start: true,
            num_inducing: 150,
            gp_mc_samples: 1,
            initial_noise_variance: 1e-2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("vae_epochs", self.vae_epochs),
            ("batch_size", self.batch_size),
            ("retrain_period", self.retrain_period),
            ("num_inducing", self.num_inducing),
            ("gp_mc_samples", self.gp_mc_samples),
        ];
        if let Some((name, _)) = pos.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidParameter(alloc::format!("{name} must be positive")));
        }
        for (name, v) in [
            ("vae_lr", self.vae_lr),
            ("gp_lr", self.gp_lr),
            ("initial_noise_variance", self.initial_noise_variance),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(alloc::format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Vae,
    Gp,
    JointUnlabelled,
    JointLabelled,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Vae => "vae",
            Phase::Gp => "gp",
            Phase::JointUnlabelled => "joint_unlabelled",
            Phase::JointLabelled => "joint_labelled",
        }
    }
}

/// One optimizer step. Objectives are the maximized bounds; components that
/// do not apply to a phase are zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainLogEntry {
    pub phase: Phase,
    pub step: usize,
    pub objective: f64,
    pub reconstruction: f64,
    pub kl: f64,
    pub gp_bound: f64,
}

/// Owns optimizer state and the training RNG across BO iterations.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    vae_adam: AdamState,
    gp_adam: AdamState,
    rng: ChaCha8Rng,
    vae_fitted: bool,
    step: usize,
    pub log: Vec<TrainLogEntry>,
}

/// Result of one training round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainOutcome {
    pub vae_changed: bool,
}

fn vae_grads(g: &Graph, root: Var, vars: &[Var], params: &mut [&mut Tensor]) -> Result<()> {
    let grads = g.backward(root)?;
    for (v, p) in vars.iter().zip(params.iter_mut()) {
        grads.write_to(*v, p)?;
    }
    Ok(())
}

/// Standard GP state for a latent space: unit signal variance and
/// lengthscales, inducing inputs seeded by k-means++ on `latents`.
pub fn initial_gp<R: rand::Rng + ?Sized>(
    latents: &Mat,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<GplvmModel> {
    let d = latents.cols();
    let inducing = crate::gp::kmeanspp_seed(latents, cfg.num_inducing, rng);
    let kernel = SqExpArdKernel::new(1.0, alloc::vec![1.0; d])?;
    let mut gp = GplvmModel::new(kernel, inducing, cfg.initial_noise_variance)?;
    gp.num_mc_samples = cfg.gp_mc_samples;
    Ok(gp)
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            vae_adam: AdamState::new(cfg.vae_lr),
            gp_adam: AdamState::new(cfg.gp_lr),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            vae_fitted: false,
            step: 0,
            log: Vec::new(),
        })
    }

    pub fn vae_fitted(&self) -> bool {
        self.vae_fitted
    }

    /// Declares the VAE already fitted on the unlabelled data, e.g. when it
    /// comes from a cache of an identical pretraining run.
    pub fn mark_vae_fitted(&mut self) {
        self.vae_fitted = true;
    }

    fn push_log(&mut self, phase: Phase, objective: f64, reconstruction: f64, kl: f64, gp_bound: f64) {
        self.log.push(TrainLogEntry {
            phase,
            step: self.step,
            objective,
            reconstruction,
            kl,
            gp_bound,
        });
        self.step += 1;
    }

    /// One Adam step on the mean ELBO of a minibatch.
    pub fn vae_step(&mut self, vae: &mut VaeModel, batch: &Mat, phase: Phase) -> Result<()> {
        let eps = standard_normal_mat(batch.rows(), vae.latent_dim(), &mut self.rng);
        let mut g = Graph::new();
        let vars = vae.register(&mut g);
        let x = g.constant(batch.clone());
        let e = vars_elbo(vae, &mut g, &vars, x, &eps)?;
        let loss = g.scale(e.elbo, -1.0 / batch.rows() as f64);
        g.check_finite()?;
        let (elbo, rec, kl) = (g.scalar(e.elbo), g.scalar(e.reconstruction), g.scalar(e.kl));
        let mut params = vae.params_mut();
        vae_grads(&g, loss, &vars.all(), &mut params)?;
        adam_step(&mut params, &mut self.vae_adam)?;
        let b = batch.rows() as f64;
        self.push_log(phase, elbo / b, rec / b, kl / b, 0.0);
        Ok(())
    }

    fn shuffled_batches(&mut self, n: usize) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut self.rng);
        idx.chunks(self.cfg.batch_size).map(<[usize]>::to_vec).collect()
    }

    /// Fits the VAE on the unlabelled pool for `vae_epochs` passes.
    pub fn fit_vae(&mut self, vae: &mut VaeModel, xu: &Mat) -> Result<()> {
        if xu.rows() == 0 {
            return Err(Error::InsufficientData("unlabelled pool is empty".into()));
        }
        for _ in 0..self.cfg.vae_epochs {
            for b in self.shuffled_batches(xu.rows()) {
                let batch = xu.select_rows(&b);
                self.vae_step(vae, &batch, Phase::Vae)?;
            }
        }
        self.vae_fitted = true;
        Ok(())
    }

    /// Re-seeds the inducing inputs on the encoded pool. Kernel
    /// hyperparameters survive when `warm_start` is set.
    pub fn reseed_inducing(&mut self, vae: &VaeModel, gp: &mut GplvmModel, xu: &Mat) -> Result<()> {
        let (means, _) = vae.encode_batch(xu)?;
        let fresh = initial_gp(&means, &self.cfg, &mut self.rng)?;
        let mut next = fresh;
        if self.cfg.warm_start && next.latent_dim() == gp.latent_dim() {
            next.set_kernel(&gp.kernel())?;
            next.set_noise_variance(gp.noise_variance())?;
        }
        *gp = next;
        self.gp_adam.reset();
        Ok(())
    }

    /// Fits the GP to the encoded labelled data: closed-form `q(u)` at the
    /// encoding means, then Adam on kernel hyperparameters, noise and inducing
    /// inputs against the bound at reparameterized encodings.
    pub fn fit_gp(&mut self, vae: &VaeModel, gp: &mut GplvmModel, xo: &Mat, yo: &[f64]) -> Result<()> {
        if yo.is_empty() {
            gp.set_output_transform(OutputTransform::default());
            return gp.reset_q_to_prior();
        }
        if xo.rows() != yo.len() {
            return Err(Error::DimensionMismatch {
                context: "labelled set",
                expected: xo.rows(),
                got: yo.len(),
            });
        }
        let (means, vars) = vae.encode_batch(xo)?;
        gp.set_output_transform(OutputTransform::standardizing(yo));
        if !self.cfg.warm_start {
            gp.set_kernel(&SqExpArdKernel::new(1.0, alloc::vec![1.0; gp.latent_dim()])?)?;
            gp.set_noise_variance(self.cfg.initial_noise_variance)?;
            self.gp_adam.reset();
        }
        let t = gp.output_transform();
        let y = Mat::column(&yo.iter().map(|v| t.forward(*v)).collect::<Vec<_>>());
        for _ in 0..self.cfg.gp_steps {
            gp.set_optimal_q(&means, yo)?;
            let mut g = Graph::new();
            let v = gp.register_hyperparameters(&mut g);
            let mut total = None;
            let samples = gp.num_mc_samples.max(1);
            for _ in 0..samples {
                let z = g.constant(sample_inputs(&means, &vars, &mut self.rng));
                let yv = g.constant(y.clone());
                let e = gp.elbo_graph(&mut g, &v, z, yv)?;
                total = Some(match total {
                    None => e.elbo,
                    Some(acc) => g.add(acc, e.elbo),
                });
            }
            let total = total.expect("at least one sample");
            let bound = g.scalar(total) / samples as f64;
            let loss = g.scale(total, -1.0 / samples as f64);
            g.check_finite()?;
            let grads = g.backward(loss)?;
            let hv = [v.log_variance, v.log_lengthscales, v.log_noise_variance, v.inducing];
            let mut hp = gp.hyper_params_mut();
            for (var, p) in hv.iter().zip(hp.iter_mut()) {
                grads.write_to(*var, p)?;
            }
            adam_step(&mut hp, &mut self.gp_adam)?;
            gp.clamp_hyperparameters();
            self.push_log(Phase::Gp, bound, 0.0, 0.0, bound);
        }
        gp.set_optimal_q(&means, yo)
    }

    /// One labelled joint step: VAE ELBO of the labelled inputs plus the GP
    /// bound at their reparameterized encodings, ascended in the VAE
    /// parameters and the GP hyperparameters together.
    pub fn joint_labelled_step(
        &mut self,
        vae: &mut VaeModel,
        gp: &mut GplvmModel,
        xo: &Mat,
        yo: &[f64],
    ) -> Result<()> {
        let (means, _) = vae.encode_batch(xo)?;
        gp.set_output_transform(OutputTransform::standardizing(yo));
        gp.set_optimal_q(&means, yo)?;
        let eps_vae = standard_normal_mat(xo.rows(), vae.latent_dim(), &mut self.rng);
        let eps_gp = standard_normal_mat(xo.rows(), vae.latent_dim(), &mut self.rng);
        let mut g = Graph::new();
        let vv = vae.register(&mut g);
        let gv = gp.register_hyperparameters(&mut g);
        let parts = joint_objective_graph(vae, gp, &mut g, &vv, &gv, xo, yo, &eps_vae, &eps_gp)?;
        let loss = g.scale(parts.objective, -1.0);
        g.check_finite()?;
        let grads = g.backward(loss)?;
        {
            let mut params = vae.params_mut();
            for (var, p) in vv.all().iter().zip(params.iter_mut()) {
                grads.write_to(*var, p)?;
            }
            adam_step(&mut params, &mut self.vae_adam)?;
        }
        let hv = [gv.log_variance, gv.log_lengthscales, gv.log_noise_variance, gv.inducing];
        let mut hp = gp.hyper_params_mut();
        for (var, p) in hv.iter().zip(hp.iter_mut()) {
            grads.write_to(*var, p)?;
        }
        adam_step(&mut hp, &mut self.gp_adam)?;
        gp.clamp_hyperparameters();
        let (obj, rec, kl, gpb) = (
            g.scalar(parts.objective),
            g.scalar(parts.reconstruction),
            g.scalar(parts.kl),
            g.scalar(parts.gp_bound),
        );
        self.push_log(Phase::JointLabelled, obj, rec, kl, gpb);
        Ok(())
    }

    /// Disjoint regime: the VAE is fitted on the unlabelled pool once and then
    /// frozen; the GP is refitted on every call.
    pub fn train_disjoint(
        &mut self,
        vae: &mut VaeModel,
        gp: &mut GplvmModel,
        xu: &Mat,
        xo: &Mat,
        yo: &[f64],
    ) -> Result<TrainOutcome> {
        let outcome = self.ensure_vae(vae, gp, xu)?;
        self.fit_gp(vae, gp, xo, yo)?;
        Ok(outcome)
    }

    /// Fits the VAE on the unlabelled pool if that has not happened yet.
    pub fn ensure_vae(&mut self, vae: &mut VaeModel, gp: &mut GplvmModel, xu: &Mat) -> Result<TrainOutcome> {
        if self.vae_fitted {
            return Ok(TrainOutcome { vae_changed: false });
        }
        self.fit_vae(vae, xu)?;
        self.reseed_inducing(vae, gp, xu)?;
        Ok(TrainOutcome { vae_changed: true })
    }

    /// Joint regime: after pretraining, every call with `retrain_vae` runs
    /// `joint_steps` pairs of one unlabelled minibatch step and one labelled
    /// step. The GP is refitted on every call.
    pub fn train_joint(
        &mut self,
        vae: &mut VaeModel,
        gp: &mut GplvmModel,
        xu: &Mat,
        xo: &Mat,
        yo: &[f64],
        retrain_vae: bool,
    ) -> Result<TrainOutcome> {
        let mut vae_changed = false;
        if !self.vae_fitted {
            self.fit_vae(vae, xu)?;
            vae_changed = true;
        }
        if retrain_vae && self.cfg.joint_steps > 0 {
            let mut batches = Vec::new();
            for _ in 0..self.cfg.joint_steps {
                if batches.is_empty() {
                    batches = self.shuffled_batches(xu.rows());
                    batches.reverse();
                }
                let b = batches.pop().expect("non-empty batch list");
                self.vae_step(vae, &xu.select_rows(&b), Phase::JointUnlabelled)?;
                if !yo.is_empty() {
                    self.joint_labelled_step(vae, gp, xo, yo)?;
                }
            }
            vae_changed = true;
        }
        if vae_changed {
            self.reseed_inducing(vae, gp, xu)?;
        }
        self.fit_gp(vae, gp, xo, yo)?;
        Ok(TrainOutcome { vae_changed })
    }

    /// Dispatches on the regime; the VAE may change only when
    /// `iteration % retrain_period == 0`.
    pub fn train(
        &mut self,
        regime: Regime,
        vae: &mut VaeModel,
        gp: &mut GplvmModel,
        xu: &Mat,
        xo: &Mat,
        yo: &[f64],
        iteration: usize,
    ) -> Result<TrainOutcome> {
        match regime {
            Regime::Disjoint => self.train_disjoint(vae, gp, xu, xo, yo),
            Regime::Joint => {
                let retrain = iteration % self.cfg.retrain_period == 0;
                self.train_joint(vae, gp, xu, xo, yo, retrain)
            }
        }
    }
}

fn vars_elbo(
    vae: &VaeModel,
    g: &mut Graph,
    vars: &VaeVars,
    x: Var,
    eps: &Mat,
) -> Result<ElboGraph> {
    let e = g.constant(eps.clone());
    Ok(vae.elbo_graph(g, vars, x, e))
}

/// Pieces of the labelled joint objective.
#[derive(Clone, Copy, Debug)]
pub struct JointObjectiveGraph {
    pub objective: Var,
    pub reconstruction: Var,
    pub kl: Var,
    pub gp_bound: Var,
}

/// `Σ ELBO_vae(x_o) + GP bound(z_o, y_o)` with `z_o = μ_φ(x_o) + σ_φ(x_o) ⊙ ε`.
/// `y_o` is mapped through the GP's output transform.
#[allow(clippy::too_many_arguments)]
pub fn joint_objective_graph(
    vae: &VaeModel,
    gp: &GplvmModel,
    g: &mut Graph,
    vv: &VaeVars,
    gv: &GpVars,
    xo: &Mat,
    yo: &[f64],
    eps_vae: &Mat,
    eps_gp: &Mat,
) -> Result<JointObjectiveGraph> {
    let x = g.constant(xo.clone());
    let e = vars_elbo(vae, g, vv, x, eps_vae)?;
    let (mean, logvar) = vae.encoder_graph(g, vv, x);
    let half = g.scale(logvar, 0.5);
    let sd = g.exp(half);
    let ev = g.constant(eps_gp.clone());
    let noise = g.mul(sd, ev);
    let z = g.add(mean, noise);
    let t = gp.output_transform();
    let y = g.constant(Mat::column(&yo.iter().map(|v| t.forward(*v)).collect::<Vec<_>>()));
    let b = gp.elbo_graph(g, gv, z, y)?;
    let objective = g.add(e.elbo, b.elbo);
    Ok(JointObjectiveGraph {
        objective,
        reconstruction: e.reconstruction,
        kl: e.kl,
        gp_bound: b.elbo,
    })
}
