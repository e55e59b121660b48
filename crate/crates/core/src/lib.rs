//! Latent-space Bayesian optimization: a VAE embeds structured inputs into a
//! low-dimensional latent space, a sparse variational GP with uncertain inputs
//! models the objective there, and acquisition functions are maximized inside
//! a region fitted to the encoded data.
#![no_std]
extern crate alloc;

pub mod acquisition;
pub mod boloop;
pub mod bounds;
pub mod datasets;
pub mod error;
pub mod gp;
pub mod harness;
pub mod ndcore;
pub mod training;
pub mod vae;

pub use error::{Error, Result};
