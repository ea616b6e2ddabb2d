//! Heteroscedastic double Bayesian elastic net.
//!
//! Joint Bayesian estimation of mean coefficients β and log-variance
//! coefficients γ in `y_i ~ N(x_iᵀβ, exp(x_iᵀγ))`, with elastic-net
//! scale-mixture priors on both blocks, fitted by a Gibbs sampler with a
//! Metropolis–Hastings step for γ. The crate also carries homoscedastic
//! baselines, convergence diagnostics, a simulation harness and the CLI
//! plumbing behind the `hdben` binary.
//!
//! The numerical modules are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix the scalar to `f64`.

pub mod baselines;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod samplers;
pub mod scalar;
pub mod simulation;

pub use error::{Error, Result};
pub use samplers::{SamplerConfig, TauUpdateMode};
pub use scalar::Scalar;

pub type Dataset = model::Dataset<f64>;
pub type GroundTruth = model::GroundTruth<f64>;
pub type Hyperparameters = model::Hyperparameters<f64>;
pub type ChainState = model::ChainState<f64>;
pub type PosteriorDraws = model::PosteriorDraws<f64>;
