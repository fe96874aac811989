//! Dependent probabilistic matrix factorization: matrix factorization whose
//! latent features vary with side information under multi-task Gaussian
//! process priors, fitted by slice sampling.

mod error;

pub mod config;
pub mod data;
pub mod diagnostics;
pub mod driver;
pub mod evaluation;
pub mod kernels;
pub mod likelihood;
pub mod model;
pub mod predict;
pub mod samplers;

pub use error::{Error, Result};
