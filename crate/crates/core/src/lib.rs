//! Copula-calibrated inductive conformal prediction for multi-target regression.
//!
//! A point regressor and a normalizing error model are trained on a proper
//! training set. Normalized nonconformity scores on a held-out calibration
//! set form a score matrix, one column per target. A copula fitted to that
//! matrix (independent, Gumbel or empirical) converts a global significance
//! level into a shared per-target level, whose score quantiles give the
//! half-widths of a hyper-rectangle prediction.
//!
//! Module map:
//! - [`dataio`]: CSV loading, standardization, fold plans, synthetic data.
//! - [`regress`]: ridge, k-NN and SELU MLP regressors plus the log-residual error model.
//! - [`scores`]: nonconformity scores, empirical CDFs, pseudo-observations, p-values.
//! - [`copula`]: copula models, Gumbel fitting and per-target level calibration.
//! - [`conformal`]: the end-to-end predictor producing [`conformal::PredictionBox`]es.
//! - [`eval`]: validity curves, gap and efficiency metrics, cross-validated experiments.

pub mod conformal;
pub mod copula;
pub mod dataio;
mod error;
pub mod eval;
pub mod regress;
pub mod scores;

pub use error::{Error, Result};
