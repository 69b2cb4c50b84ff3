//! Point regressors and the normalizing error model.
//!
//! The conformal layer only needs [`Regressor::predict`]; [`FittedModel`]
//! dispatches over the three built-in model kinds.

mod knn;
pub mod mlp;
mod ridge;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use knn::KnnModel;
pub use mlp::{Mlp, MlpGradients, MlpParams};
pub use ridge::RidgeModel;

use crate::{Error, Result};

/// Floor applied to absolute residuals before taking their logarithm.
pub const DEFAULT_RESIDUAL_FLOOR: f64 = 1e-8;

/// A fitted multi-output regressor.
pub trait Regressor {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Maps an `n x input_dim` matrix to `n x output_dim` predictions.
    fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>>;
}

fn check_input<R: Regressor + ?Sized>(model: &R, x: ArrayView2<'_, f64>) -> Result<()> {
    if x.ncols() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "regressor input columns",
            expected: model.input_dim(),
            got: x.ncols(),
        });
    }
    Ok(())
}

/// Model family and hyperparameters, as stored in JSON configs
/// (`{"kind": "ridge", "l2": 0.001}` and so on).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "SpecRepr", into = "SpecRepr")]
pub enum RegressorSpec {
    Mlp(MlpParams),
    Knn { k: usize },
    Ridge { l2: f64 },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KnnRepr {
    k: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RidgeRepr {
    #[serde(default)]
    l2: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum SpecRepr {
    Mlp(MlpParams),
    Knn(KnnRepr),
    Ridge(RidgeRepr),
}

impl From<SpecRepr> for RegressorSpec {
    fn from(r: SpecRepr) -> Self {
        match r {
            SpecRepr::Mlp(p) => RegressorSpec::Mlp(p),
            SpecRepr::Knn(KnnRepr { k }) => RegressorSpec::Knn { k },
            SpecRepr::Ridge(RidgeRepr { l2 }) => RegressorSpec::Ridge { l2 },
        }
    }
}

impl From<RegressorSpec> for SpecRepr {
    fn from(s: RegressorSpec) -> Self {
        match s {
            RegressorSpec::Mlp(p) => SpecRepr::Mlp(p),
            RegressorSpec::Knn { k } => SpecRepr::Knn(KnnRepr { k }),
            RegressorSpec::Ridge { l2 } => SpecRepr::Ridge(RidgeRepr { l2 }),
        }
    }
}

impl RegressorSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            RegressorSpec::Mlp(p) => p.validate(),
            RegressorSpec::Knn { k } if *k == 0 => {
                Err(Error::InvalidSpec("knn k must be at least 1".into()))
            }
            RegressorSpec::Ridge { l2 } if !(*l2 >= 0.0 && l2.is_finite()) => Err(
                Error::InvalidSpec(format!("ridge l2 must be non-negative, got {l2}")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Mlp(Mlp),
    Knn(KnnModel),
    Ridge(RidgeModel),
}

impl FittedModel {
    fn inner(&self) -> &dyn Regressor {
        match self {
            FittedModel::Mlp(m) => m,
            FittedModel::Knn(m) => m,
            FittedModel::Ridge(m) => m,
        }
    }
}

impl Regressor for FittedModel {
    fn input_dim(&self) -> usize {
        self.inner().input_dim()
    }

    fn output_dim(&self) -> usize {
        self.inner().output_dim()
    }

    fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.inner().predict(x)
    }
}

/// Trains a model of the given kind. Deterministic given `seed`.
pub fn fit(
    spec: &RegressorSpec,
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    seed: u64,
) -> Result<FittedModel> {
    spec.validate()?;
    if x.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch {
            context: "training rows",
            expected: x.nrows(),
            got: y.nrows(),
        });
    }
    if x.nrows() == 0 {
        return Err(Error::EmptySample);
    }
    Ok(match spec {
        RegressorSpec::Ridge { l2 } => FittedModel::Ridge(RidgeModel::fit(x, y, *l2)?),
        RegressorSpec::Knn { k } => FittedModel::Knn(KnnModel::fit(x, y, *k)?),
        RegressorSpec::Mlp(params) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut net = Mlp::new(x.ncols(), &params.widths, y.ncols(), params.dropout, &mut rng);
            net.train(x, y, params, &mut rng)?;
            FittedModel::Mlp(net)
        }
    })
}

/// `ln(max(|y - yhat|, floor))`, elementwise.
pub fn log_residuals(
    y: ArrayView2<'_, f64>,
    yhat: ArrayView2<'_, f64>,
    floor: f64,
) -> Result<Array2<f64>> {
    if y.dim() != yhat.dim() {
        return Err(Error::DimensionMismatch {
            context: "residual shapes",
            expected: y.len(),
            got: yhat.len(),
        });
    }
    Ok(ndarray::Zip::from(&y)
        .and(&yhat)
        .map_collect(|&a, &b| (a - b).abs().max(floor).ln()))
}

/// A regressor fitted on log absolute residuals of the underlying model.
/// Its outputs are in log space; consumers exponentiate them.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorModel {
    model: FittedModel,
    floor: f64,
}

impl ErrorModel {
    /// Wraps an already fitted log-residual model.
    pub fn new(model: FittedModel, floor: f64) -> Result<Self> {
        if !(floor > 0.0 && floor.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "residual floor must be positive, got {floor}"
            )));
        }
        Ok(Self { model, floor })
    }

    pub fn model(&self) -> &FittedModel {
        &self.model
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Predicted log-residuals `mu`, one column per target.
    pub fn predict_mu(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.model.predict(x)
    }
}

/// Fits a single multi-output model on `ln(max(|Y - Yhat|, floor))`.
pub fn fit_error_model(
    spec: &RegressorSpec,
    x_train: ArrayView2<'_, f64>,
    y_train: ArrayView2<'_, f64>,
    yhat_train: ArrayView2<'_, f64>,
    floor: f64,
    seed: u64,
) -> Result<ErrorModel> {
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "residual floor must be positive, got {floor}"
        )));
    }
    let mu = log_residuals(y_train, yhat_train, floor)?;
    ErrorModel::new(fit(spec, x_train, mu.view(), seed)?, floor)
}
