//! Bayesian quantile regression with global-local shrinkage priors.

mod prior;
mod vb;

pub use prior::{make_prior, Hyper, PriorKind, QuantileSpec, ShrinkagePrior};
pub use vb::{fit_bqr, fit_bqr_xy, predict_quantile, BetaCov, BqrConfig, BqrPosterior, CovarianceMode, ELBO_SLACK};
