//! SDE model representation and Monte Carlo oracles.
//!
//! The model class is `dX = a(X(t-))dt + b(X(t-))dB(t) + c(X(t-))dC(t)` with
//! polynomial drift/diffusion coefficients, `B` a vector of independent
//! standard Brownian motions and `C` a vector of independent compound Poisson
//! processes with zero-mean jump sizes.

mod estimate;
mod model;
mod poly;
mod simulate;

pub use estimate::{empirical_chf, histogram, kde, kde_marginal, silverman_bandwidth};
pub use model::{InitialDist, JumpCoeff, JumpColumn, JumpDist, JumpProcess, SdeModel};
pub use poly::Polynomial;
pub use simulate::{simulate, PathEnsemble, Scheme, SimOptions};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SdeError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid simulation options: {0}")]
    InvalidOptions(String),
    #[error("time {0} is not among the stored times")]
    TimeNotStored(f64),
    #[error("{excluded} of {total} paths exploded to non-finite states (limit is 1%)")]
    TooManyExplosions { excluded: usize, total: usize },
    #[error("estimator needs at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
}
