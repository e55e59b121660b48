//! Experiment runner for latent-space Bayesian optimization: configuration,
//! sweeps over seeds and settings, CSV output, checkpoints and dataset files.

pub mod checkpoint;
pub mod config;
pub mod csv;
pub mod datafile;
pub mod error;
pub mod experiment;

pub use config::{DatasetKind, ExperimentConfig};
pub use error::{Error, Result};
