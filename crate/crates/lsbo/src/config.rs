//! Flat `key = value` experiment configuration.
//!
//! One setting per line, `#` starts a comment, lists are comma-separated.
//! Every key has a default; unknown and repeated keys are errors.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use lsbo_core::acquisition::{AcquisitionKind, AcquisitionSpec};
use lsbo_core::bounds::{BoundsKind, BoundsSpec};
use lsbo_core::training::{Regime, TrainConfig};
use lsbo_core::vae::Likelihood;
use sha2::{Digest, Sha256};

use crate::error::{io_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Shape,
    Synthetic,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Shape => "shape",
            DatasetKind::Synthetic => "synthetic",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "shape" => Some(DatasetKind::Shape),
            "synthetic" => Some(DatasetKind::Synthetic),
            _ => None,
        }
    }

    pub fn default_likelihood(self) -> Likelihood {
        match self {
            DatasetKind::Shape => Likelihood::Bernoulli,
            DatasetKind::Synthetic => Likelihood::Gaussian,
        }
    }
}

/// Where the unlabelled pool comes from and how the black box observes it.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub num_train: usize,
    pub data_seed: u64,
    /// Load the pool from a dataset file instead of generating it.
    pub data_file: Option<String>,
    pub noise_sigma: f64,
    /// Shape only: threshold decoded intensities at ½ before measuring area.
    pub thresholded: bool,
    pub ambient_dim: usize,
    pub intrinsic_dim: usize,
    pub benchmark_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            num_train: 10_000,
            data_seed: 0,
            data_file: None,
            noise_sigma: 0.0,
            thresholded: false,
            ambient_dim: 20,
            intrinsic_dim: 2,
            benchmark_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnoseConfig {
    pub grid_width: usize,
    pub grid_height: usize,
    /// Half-width of the grid in standard deviations of the encoded data.
    pub grid_span: f64,
    pub contour_percentile: f64,
    pub axes: (usize, usize),
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            grid_width: 40,
            grid_height: 40,
            grid_span: 4.0,
            contour_percentile: 99.0,
            axes: (0, 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub regimes: Vec<Regime>,
    pub latent_dims: Vec<usize>,
    pub bounds: Vec<BoundsKind>,
    pub acquisitions: Vec<AcquisitionKind>,
    pub seeds: Vec<u64>,
    pub budget: usize,
    pub n_init: usize,
    pub acquisition_threshold: Option<f64>,
    /// `None` picks the dataset's natural likelihood.
    pub likelihood: Option<Likelihood>,
    /// `seed` is ignored; every run derives its own.
    pub train: TrainConfig,
    /// `kind` is ignored; the `acquisitions` axis sets it.
    pub acquisition: AcquisitionSpec,
    /// `kind` is ignored; the `bounds` axis sets it.
    pub bounds_spec: BoundsSpec,
    pub data: DataConfig,
    pub diagnose: DiagnoseConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Shape,
            regimes: vec![Regime::Disjoint],
            latent_dims: vec![3, 4, 5, 6],
            bounds: vec![BoundsKind::Hypercube],
            acquisitions: vec![AcquisitionKind::Ei],
            seeds: (0..10).collect(),
            budget: 100,
            n_init: 10,
            acquisition_threshold: None,
            likelihood: None,
            train: TrainConfig::default(),
            acquisition: AcquisitionSpec::default(),
            bounds_spec: BoundsSpec::default(),
            data: DataConfig::default(),
            diagnose: DiagnoseConfig::default(),
        }
    }
}

fn parse_scalar<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: Display,
{
    v.parse::<T>().map_err(|e| format!("`{v}`: {e}"))
}

fn parse_named<T>(v: &str, from: impl Fn(&str) -> Option<T>, what: &str) -> std::result::Result<T, String> {
    from(v).ok_or_else(|| format!("unknown {what} `{v}`"))
}

fn parse_list<T>(v: &str, item: impl Fn(&str) -> std::result::Result<T, String>) -> std::result::Result<Vec<T>, String> {
    v.split(',').map(|s| item(s.trim())).collect()
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn parse_optional_f64(v: &str) -> std::result::Result<Option<f64>, String> {
    if v == "none" {
        Ok(None)
    } else {
        parse_scalar(v).map(Some)
    }
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(", ")
}

/// Shortest text that parses back to the same bits.
fn float(v: f64) -> String {
    format!("{v:?}")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Config { line: line_no, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(err(format!("`{key}` set twice")));
            }
            seen.push(key.to_string());
            cfg.set(key, value).map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let t = &mut self.train;
        let a = &mut self.acquisition;
        let b = &mut self.bounds_spec;
        let d = &mut self.data;
        let g = &mut self.diagnose;
        match key {
            "dataset" => self.dataset = parse_named(v, DatasetKind::from_name, "dataset")?,
            "regime" => self.regimes = parse_list(v, |s| parse_named(s, Regime::from_name, "regime"))?,
            "latent_dims" => self.latent_dims = parse_list(v, parse_scalar)?,
            "bounds" => self.bounds = parse_list(v, |s| parse_named(s, BoundsKind::from_name, "bounds variant"))?,
            "acquisitions" => {
                self.acquisitions = parse_list(v, |s| parse_named(s, AcquisitionKind::from_name, "acquisition"))?
            }
            "seeds" => self.seeds = parse_list(v, parse_scalar)?,
            "budget" => self.budget = parse_scalar(v)?,
            "n_init" => self.n_init = parse_scalar(v)?,
            "acquisition_threshold" => self.acquisition_threshold = parse_optional_f64(v)?,
            "likelihood" => {
                self.likelihood = if v == "auto" {
                    None
                } else {
                    Some(parse_named(v, Likelihood::from_name, "likelihood")?)
                }
            }
            "vae_lr" => t.vae_lr = parse_scalar(v)?,
            "gp_lr" => t.gp_lr = parse_scalar(v)?,
            "vae_epochs" => t.vae_epochs = parse_scalar(v)?,
            "gp_steps" => t.gp_steps = parse_scalar(v)?,
            "joint_steps" => t.joint_steps = parse_scalar(v)?,
            "batch_size" => t.batch_size = parse_scalar(v)?,
            "retrain_period" => t.retrain_period = parse_scalar(v)?,
            "warm_start" => t.warm_start = parse_bool(v)?,
            "num_inducing" => t.num_inducing = parse_scalar(v)?,
            "gp_mc_samples" => t.gp_mc_samples = parse_scalar(v)?,
            "initial_noise_variance" => t.initial_noise_variance = parse_scalar(v)?,
            "lcb_beta" => a.lcb_beta = parse_scalar(v)?,
            "ts_candidates" => a.ts_candidates = parse_scalar(v)?,
            "xi" => a.xi = parse_scalar(v)?,
            "num_candidates" => a.num_candidates = parse_scalar(v)?,
            "num_refine" => a.num_refine = parse_scalar(v)?,
            "ellipsoid_tol" => b.ellipsoid_tol = parse_scalar(v)?,
            "roundtrip_percentile" => b.roundtrip_percentile = parse_scalar(v)?,
            "roundtrip_inflation" => b.roundtrip_inflation = parse_scalar(v)?,
            "num_train" => d.num_train = parse_scalar(v)?,
            "data_seed" => d.data_seed = parse_scalar(v)?,
            "data_file" => d.data_file = if v == "none" { None } else { Some(v.to_string()) },
            "noise_sigma" => d.noise_sigma = parse_scalar(v)?,
            "thresholded" => d.thresholded = parse_bool(v)?,
            "ambient_dim" => d.ambient_dim = parse_scalar(v)?,
            "intrinsic_dim" => d.intrinsic_dim = parse_scalar(v)?,
            "benchmark_seed" => d.benchmark_seed = parse_scalar(v)?,
            "grid_width" => g.grid_width = parse_scalar(v)?,
            "grid_height" => g.grid_height = parse_scalar(v)?,
            "grid_span" => g.grid_span = parse_scalar(v)?,
            "contour_percentile" => g.contour_percentile = parse_scalar(v)?,
            "diagnose_axes" => {
                let axes: Vec<usize> = parse_list(v, parse_scalar)?;
                match axes[..] {
                    [x, y] => g.axes = (x, y),
                    _ => return Err(format!("diagnose_axes needs two entries, got {}", axes.len())),
                }
            }
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Every setting in a fixed order; `parse` of the joined lines
    /// reproduces the config exactly.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let a = &self.acquisition;
        let b = &self.bounds_spec;
        let d = &self.data;
        let g = &self.diagnose;
        vec![
            ("dataset", self.dataset.name().into()),
            ("regime", join(&self.regimes, |r| r.name().into())),
            ("latent_dims", join(&self.latent_dims, ToString::to_string)),
            ("bounds", join(&self.bounds, |k| k.name().into())),
            ("acquisitions", join(&self.acquisitions, |k| k.name().into())),
            ("seeds", join(&self.seeds, ToString::to_string)),
            ("budget", self.budget.to_string()),
            ("n_init", self.n_init.to_string()),
            (
                "acquisition_threshold",
                self.acquisition_threshold.map_or("none".into(), float),
            ),
            ("likelihood", self.likelihood.map_or("auto".into(), |l| l.name().into())),
            ("vae_lr", float(t.vae_lr)),
            ("gp_lr", float(t.gp_lr)),
            ("vae_epochs", t.vae_epochs.to_string()),
            ("gp_steps", t.gp_steps.to_string()),
            ("joint_steps", t.joint_steps.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("retrain_period", t.retrain_period.to_string()),
            ("warm_start", t.warm_start.to_string()),
            ("num_inducing", t.num_inducing.to_string()),
            ("gp_mc_samples", t.gp_mc_samples.to_string()),
            ("initial_noise_variance", float(t.initial_noise_variance)),
            ("lcb_beta", float(a.lcb_beta)),
            ("ts_candidates", a.ts_candidates.to_string()),
            ("xi", float(a.xi)),
            ("num_candidates", a.num_candidates.to_string()),
            ("num_refine", a.num_refine.to_string()),
            ("ellipsoid_tol", float(b.ellipsoid_tol)),
            ("roundtrip_percentile", float(b.roundtrip_percentile)),
            ("roundtrip_inflation", float(b.roundtrip_inflation)),
            ("num_train", d.num_train.to_string()),
            ("data_seed", d.data_seed.to_string()),
            ("data_file", d.data_file.clone().unwrap_or_else(|| "none".into())),
            ("noise_sigma", float(d.noise_sigma)),
            ("thresholded", d.thresholded.to_string()),
            ("ambient_dim", d.ambient_dim.to_string()),
            ("intrinsic_dim", d.intrinsic_dim.to_string()),
            ("benchmark_seed", d.benchmark_seed.to_string()),
            ("grid_width", g.grid_width.to_string()),
            ("grid_height", g.grid_height.to_string()),
            ("grid_span", float(g.grid_span)),
            ("contour_percentile", float(g.contour_percentile)),
            ("diagnose_axes", format!("{}, {}", g.axes.0, g.axes.1)),
        ]
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// First 16 hex digits of the SHA-256 of [`Self::to_text`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.regimes.is_empty()
            || self.latent_dims.is_empty()
            || self.bounds.is_empty()
            || self.acquisitions.is_empty()
            || self.seeds.is_empty()
        {
            return bad("every sweep axis needs at least one value");
        }
        if self.latent_dims.contains(&0) {
            return bad("latent dimensions must be positive");
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return bad("seeds must be distinct");
        }
        if self.n_init == 0 || self.n_init > self.data.num_train {
            return bad("n_init must be in 1..=num_train");
        }
        if !(self.data.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative");
        }
        if self.data.intrinsic_dim == 0 || self.data.ambient_dim < self.data.intrinsic_dim {
            return bad("synthetic benchmark needs 0 < intrinsic_dim <= ambient_dim");
        }
        let gd = &self.diagnose;
        if gd.grid_width == 0 || gd.grid_height == 0 || !(gd.grid_span > 0.0) || gd.axes.0 == gd.axes.1 {
            return bad("diagnostics grid needs positive size and span and two distinct axes");
        }
        if !(gd.contour_percentile > 0.0 && gd.contour_percentile <= 100.0) {
            return bad("contour_percentile must be in (0, 100]");
        }
        let b = &self.bounds_spec;
        if !(b.roundtrip_percentile > 0.0 && b.roundtrip_percentile <= 100.0) {
            return bad("roundtrip_percentile must be in (0, 100]");
        }
        if !(b.ellipsoid_tol > 0.0) || !(b.roundtrip_inflation >= 0.0) {
            return bad("ellipsoid_tol must be positive and roundtrip_inflation non-negative");
        }
        self.train.validate()?;
        self.acquisition.validate()?;
        Ok(())
    }
}
