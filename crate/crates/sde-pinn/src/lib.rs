//! Physics-informed neural networks for the probability density function and
//! characteristic function of SDE-driven state vectors.
//!
//! The library is organized around the pipeline used by the experiments:
//!
//! - [`sde`]: model class `dX = a(X)dt + b(X)dB + c(X)dC`, Monte Carlo path
//!   simulation under Gaussian and compound-Poisson forcing, and the empirical
//!   pdf/chf estimators used as validation oracles.
//! - [`net`]: dense feedforward networks with input-derivative jets (total
//!   order up to 3 over at most two active coordinates) and reverse-mode
//!   parameter gradients through the whole jet computation.
//! - [`residual`]: compiles an [`sde::SdeModel`] with polynomial coefficients
//!   into evaluable PDE residuals: the chf evolution operator and the
//!   (transformed) Fokker-Planck operator.
//! - [`train`]: collocation sampling, loss assembly, normalization quadrature,
//!   and the Adam/L-BFGS optimization loop.
//! - [`post`]: density normalization, Fourier inversion, marginalization,
//!   error metrics, and constraint/boundary audits.
//! - [`config`] and [`exp`]: the TOML experiment schema and the end-to-end
//!   runners behind the CLI subcommands.

pub mod config;
pub mod exp;
pub mod net;
pub mod post;
pub mod residual;
pub mod sde;
pub mod train;
