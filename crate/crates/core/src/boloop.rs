//! The latent-space BO driver: retrain, refit the region, maximize the
//! acquisition, decode, evaluate, append.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

#[allow(unused_imports)] // std float methods shadow these in test builds
use num_traits::Float;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::acquisition::{select, AcquisitionKind, AcquisitionSpec};
use crate::bounds::{fit_region, BoundsRegion, BoundsSpec};
use crate::error::{Error, Result};
use crate::gp::GplvmModel;
use crate::ndcore::Mat;
use crate::training::{initial_gp, Regime, TrainConfig, TrainLogEntry, Trainer};
use crate::vae::VaeModel;

/// The function being minimized, observed with additive Gaussian noise of
/// standard deviation `noise_sigma`.
pub trait BlackBox {
    fn eval(&self, x: &[f64]) -> Result<f64>;

    fn noise_sigma(&self) -> f64 {
        0.0
    }
}

/// Wraps a closure as a noiseless black box.
pub struct FnBlackBox<F>(pub F);

impl<F: Fn(&[f64]) -> f64> BlackBox for FnBlackBox<F> {
    fn eval(&self, x: &[f64]) -> Result<f64> {
        Ok((self.0)(x))
    }
}

/// SplitMix64 finalizer of `seed ^ tag`, for independent RNG streams.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STREAM_DESIGN: u64 = 1;
const STREAM_ACQUISITION: u64 = 2;
const STREAM_TRAINING: u64 = 3;
const STREAM_INDUCING: u64 = 4;

#[derive(Clone, Debug)]
pub struct BoState {
    pub labelled_x: Vec<Vec<f64>>,
    pub labelled_y: Vec<f64>,
    pub unlabelled: Arc<Mat>,
    pub iteration: usize,
    pub best_trace: Vec<f64>,
    pub rng_seed: u64,
    rng: ChaCha8Rng,
}

impl BoState {
    pub fn labelled_matrix(&self) -> Mat {
        let d = self.unlabelled.cols();
        let mut m = Mat::zeros(self.labelled_x.len(), d);
        for (i, x) in self.labelled_x.iter().enumerate() {
            m.row_slice_mut(i).copy_from_slice(x);
        }
        m
    }

    pub fn best(&self) -> Option<f64> {
        self.labelled_y.iter().cloned().reduce(f64::min)
    }
}

fn observe<B: BlackBox + ?Sized>(f: &B, x: &[f64], rng: &mut ChaCha8Rng) -> Result<f64> {
    let y = f.eval(x)?;
    let s = f.noise_sigma();
    let noisy = if s > 0.0 {
        let e: f64 = StandardNormal.sample(rng);
        y + s * e
    } else {
        y
    };
    if !noisy.is_finite() {
        return Err(Error::NonFinite {
            op: "black box",
            node: 0,
        });
    }
    Ok(noisy)
}

/// `n_init` distinct rows of `xu`, evaluated.
pub fn initialize<B: BlackBox + ?Sized>(xu: Arc<Mat>, f: &B, n_init: usize, seed: u64) -> Result<BoState> {
    if n_init == 0 || n_init > xu.rows() {
        return Err(Error::InsufficientData(alloc::format!(
            "initial design of {n_init} from a pool of {}",
            xu.rows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_DESIGN));
    let idx = sample(&mut rng, xu.rows(), n_init).into_vec();
    let mut labelled_x = Vec::with_capacity(n_init);
    let mut labelled_y = Vec::with_capacity(n_init);
    for i in idx {
        let x = xu.row_slice(i).to_vec();
        labelled_y.push(observe(f, &x, &mut rng)?);
        labelled_x.push(x);
    }
    Ok(BoState {
        labelled_x,
        labelled_y,
        unlabelled: xu,
        iteration: 0,
        best_trace: Vec::new(),
        rng_seed: seed,
        rng,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoConfig {
    pub regime: Regime,
    pub bounds: BoundsSpec,
    pub acquisition: AcquisitionSpec,
    pub train: TrainConfig,
    pub n_init: usize,
    pub budget: usize,
    /// Stop once the maximized acquisition value falls below this.
    pub acquisition_threshold: Option<f64>,
    pub seed: u64,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Disjoint,
            bounds: BoundsSpec::default(),
            acquisition: AcquisitionSpec::default(),
            train: TrainConfig::default(),
            n_init: 10,
            budget: 100,
            acquisition_threshold: None,
            seed: 0,
        }
    }
}

/// One row of the per-run log.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub z: Vec<f64>,
    pub y: f64,
    pub best: f64,
    pub acquisition_value: f64,
    pub region: &'static str,
    pub region_fallback: bool,
    /// `‖z* − μ_φ(x*)‖`
    pub drift: f64,
}

/// Everything a run mutates, cloned for transactional steps.
#[derive(Clone, Debug)]
struct Working {
    state: BoState,
    vae: VaeModel,
    gp: GplvmModel,
    trainer: Trainer,
    region: Option<(BoundsRegion, bool)>,
    acq_rng: ChaCha8Rng,
}

pub struct BoRun<B: BlackBox> {
    pub cfg: BoConfig,
    work: Working,
    f: B,
    pub records: Vec<IterationRecord>,
    pub train_log: Vec<TrainLogEntry>,
    stopped: bool,
}

impl<B: BlackBox> BoRun<B> {
    /// Starts a run. `vae_fitted` marks `vae` as already trained on `xu`, so
    /// no pretraining happens.
    pub fn new(cfg: BoConfig, vae: VaeModel, vae_fitted: bool, xu: Arc<Mat>, f: B) -> Result<Self> {
        cfg.acquisition.validate()?;
        let mut train_cfg = cfg.train.clone();
        train_cfg.seed = derive_seed(cfg.seed, STREAM_TRAINING);
        let mut trainer = Trainer::new(train_cfg)?;
        if vae_fitted {
            trainer.mark_vae_fitted();
        }
        if xu.cols() != vae.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "unlabelled pool",
                expected: vae.input_dim(),
                got: xu.cols(),
            });
        }
        let state = initialize(Arc::clone(&xu), &f, cfg.n_init, cfg.seed)?;
        let (means, _) = vae.encode_batch(&xu)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_INDUCING));
        let gp = initial_gp(&means, &cfg.train, &mut rng)?;
        let acq_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_ACQUISITION));
        Ok(Self {
            cfg,
            work: Working {
                state,
                vae,
                gp,
                trainer,
                region: None,
                acq_rng,
            },
            f,
            records: Vec::new(),
            train_log: Vec::new(),
            stopped: false,
        })
    }

    pub fn state(&self) -> &BoState {
        &self.work.state
    }

    pub fn vae(&self) -> &VaeModel {
        &self.work.vae
    }

    pub fn gp(&self) -> &GplvmModel {
        &self.work.gp
    }

    pub fn region(&self) -> Option<&BoundsRegion> {
        self.work.region.as_ref().map(|(r, _)| r)
    }

    pub fn stopped(&self) -> bool {
        self.stopped
    }

    /// One iteration. On error nothing is changed.
    pub fn step(&mut self) -> Result<&IterationRecord> {
        let mut w = self.work.clone();
        let record = bo_step(&mut w, &self.cfg, &self.f)?;
        self.train_log.append(&mut w.trainer.log);
        self.work = w;
        if let Some(t) = self.cfg.acquisition_threshold {
            if !(record.acquisition_value >= t) {
                self.stopped = true;
            }
        }
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }

    /// Steps until the budget is spent or the stopping rule fires. Errors
    /// carry the failing iteration.
    pub fn run(&mut self) -> Result<&[f64]> {
        while self.work.state.iteration < self.cfg.budget && !self.stopped {
            let it = self.work.state.iteration;
            self.step().map_err(|e| e.at_iteration(it))?;
        }
        Ok(&self.work.state.best_trace)
    }

    pub fn region_description(&self) -> Option<String> {
        self.region().map(BoundsRegion::describe)
    }
}

fn bo_step<B: BlackBox + ?Sized>(w: &mut Working, cfg: &BoConfig, f: &B) -> Result<IterationRecord> {
    let it = w.state.iteration;
    let xo = w.state.labelled_matrix();
    let xu = Arc::clone(&w.state.unlabelled);
    // The random baseline never reads a disjointly trained surrogate.
    let outcome = if cfg.acquisition.kind == AcquisitionKind::Random && cfg.regime == Regime::Disjoint {
        w.trainer.ensure_vae(&mut w.vae, &mut w.gp, &xu)?
    } else {
        w.trainer
            .train(cfg.regime, &mut w.vae, &mut w.gp, &xu, &xo, &w.state.labelled_y, it)?
    };
    if outcome.vae_changed || w.region.is_none() {
        let (means, _) = w.vae.encode_batch(&xu)?;
        let snapshot = Arc::new(w.vae.clone());
        w.region = Some(fit_region(&cfg.bounds, &means, &snapshot)?);
    }
    let (region, fallback) = w.region.as_ref().expect("region fitted above");
    let y_best = w
        .state
        .best()
        .ok_or_else(|| Error::InsufficientData("no labelled points".into()))?;
    let sel = select(&cfg.acquisition, &w.gp, region, y_best, &mut w.acq_rng)?;
    let x = w.vae.decode_mean(&sel.z)?;
    let y = observe(f, &x, &mut w.state.rng)?;
    let back = w.vae.encode(&x)?.mean;
    let drift = sel
        .z
        .iter()
        .zip(&back)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    w.state.labelled_x.push(x);
    w.state.labelled_y.push(y);
    let best = w.state.best().expect("non-empty");
    w.state.best_trace.push(best);
    w.state.iteration += 1;
    Ok(IterationRecord {
        iteration: it,
        z: sel.z,
        y,
        best,
        acquisition_value: sel.value,
        region: region.kind().name(),
        region_fallback: *fallback,
        drift,
    })
}
