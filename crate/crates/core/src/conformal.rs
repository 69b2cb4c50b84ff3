//! End-to-end inductive conformal predictor emitting hyper-rectangles.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::copula::{
    self, Calibration, CopulaKind, CopulaModel, GumbelEstimator, GumbelFit,
};
use crate::dataio::Dataset;
use crate::regress::{self, ErrorModel, FittedModel, Regressor, RegressorSpec};
use crate::scores::{self, EcdfDivisor, EmpiricalCdf, ScoreMatrix};
use crate::{Error, Result};

/// Smallest calibration set accepted by [`ConformalPredictor`].
pub const MIN_CALIBRATION_ROWS: usize = 8;

/// Everything needed to build a predictor from raw splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub regressor: RegressorSpec,
    pub error_model: RegressorSpec,
    pub copula: CopulaKind,
    pub gumbel_estimator: GumbelEstimator,
    pub beta: f64,
    pub residual_floor: f64,
    pub ecdf_divisor: EcdfDivisor,
    pub seed: u64,
}

impl BuildConfig {
    pub fn new(regressor: RegressorSpec, error_model: RegressorSpec, copula: CopulaKind) -> Self {
        Self {
            regressor,
            error_model,
            copula,
            gumbel_estimator: GumbelEstimator::default(),
            beta: scores::DEFAULT_BETA,
            residual_floor: regress::DEFAULT_RESIDUAL_FLOOR,
            ecdf_divisor: EcdfDivisor::default(),
            seed: 0,
        }
    }
}

/// The underlying regressor and its normalizing error model, both trained
/// on the proper training set.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModels {
    pub underlying: FittedModel,
    pub error_model: ErrorModel,
}

impl TrainedModels {
    /// Trains the underlying model with `seed` and the error model with
    /// `seed + 1` on the log residuals of the former.
    pub fn fit(
        train: &Dataset,
        regressor: &RegressorSpec,
        error_spec: &RegressorSpec,
        residual_floor: f64,
        seed: u64,
    ) -> Result<Self> {
        let x = train.features();
        let y = train.targets();
        let underlying = regress::fit(regressor, x, y, seed)?;
        let yhat = underlying.predict(x)?;
        let error_model = regress::fit_error_model(
            error_spec,
            x,
            y,
            yhat.view(),
            residual_floor,
            seed.wrapping_add(1),
        )?;
        Ok(Self {
            underlying,
            error_model,
        })
    }

    pub fn point_predictions(&self, x: ArrayView2<'_, f64>) -> Result<PointPredictions> {
        Ok(PointPredictions {
            yhat: self.underlying.predict(x)?,
            mu: self.error_model.predict_mu(x)?,
        })
    }

    /// Normalized nonconformity scores of `calib`.
    pub fn score_matrix(&self, calib: &Dataset, beta: f64) -> Result<ScoreMatrix> {
        let p = self.point_predictions(calib.features())?;
        scores::score_matrix(calib.targets(), p.yhat.view(), p.mu.view(), beta)
    }
}

/// Underlying predictions and log-error estimates for a batch of inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PointPredictions {
    pub yhat: Array2<f64>,
    pub mu: Array2<f64>,
}

/// Hyper-rectangle prediction: the product of closed per-target intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl PredictionBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::LengthMismatch {
                left: lower.len(),
                right: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::InvalidParameter("a box needs at least one target".into()));
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| !(l <= u && l.is_finite() && u.is_finite()))
        {
            return Err(Error::DomainError(
                "box bounds must be finite with lower <= upper".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    /// `[center - half, center + half]` per target.
    pub fn centered(center: &[f64], half_width: &[f64]) -> Result<Self> {
        Self::new(
            center.iter().zip(half_width).map(|(c, w)| c - w).collect(),
            center.iter().zip(half_width).map(|(c, w)| c + w).collect(),
        )
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn volume(&self) -> f64 {
        box_volume(self)
    }

    pub fn contains(&self, y: &[f64]) -> Result<bool> {
        box_contains(self, y)
    }

    /// Whether `other` lies inside `self`.
    pub fn encloses(&self, other: &PredictionBox) -> bool {
        self.dim() == other.dim()
            && (0..self.dim()).all(|j| self.lower[j] <= other.lower[j] && other.upper[j] <= self.upper[j])
    }
}

/// Product of side lengths.
pub fn box_volume(b: &PredictionBox) -> f64 {
    b.lower.iter().zip(&b.upper).map(|(l, u)| u - l).product()
}

/// Closed-interval membership in every coordinate.
pub fn box_contains(b: &PredictionBox, y: &[f64]) -> Result<bool> {
    if y.len() != b.dim() {
        return Err(Error::LengthMismatch {
            left: b.dim(),
            right: y.len(),
        });
    }
    Ok(y
        .iter()
        .zip(b.lower.iter().zip(&b.upper))
        .all(|(v, (l, u))| l <= v && v <= u))
}

/// A calibrated predictor. Immutable once built; thresholds are recomputed
/// from the stored score matrix for every requested significance level.
#[derive(Debug, Clone)]
pub struct ConformalPredictor {
    models: Arc<TrainedModels>,
    score_matrix: ScoreMatrix,
    beta: f64,
    copula: CopulaModel,
    gumbel_fit: Option<GumbelFit>,
    divisor: EcdfDivisor,
    cdfs: Vec<EmpiricalCdf>,
}

impl ConformalPredictor {
    /// Fits the copula to an already computed calibration score matrix.
    pub fn from_scores(
        models: Arc<TrainedModels>,
        score_matrix: ScoreMatrix,
        beta: f64,
        copula: CopulaKind,
        estimator: GumbelEstimator,
        divisor: EcdfDivisor,
    ) -> Result<Self> {
        if score_matrix.n_rows() < MIN_CALIBRATION_ROWS {
            return Err(Error::CalibTooSmall {
                needed: MIN_CALIBRATION_ROWS,
                got: score_matrix.n_rows(),
            });
        }
        let m = models.underlying.output_dim();
        if score_matrix.n_targets() != m || models.error_model.model().output_dim() != m {
            return Err(Error::DimensionMismatch {
                context: "score matrix targets",
                expected: m,
                got: score_matrix.n_targets(),
            });
        }
        let (copula, gumbel_fit) = copula::fit_copula(copula, &score_matrix, estimator, divisor)?;
        let cdfs = copula::column_cdfs(&score_matrix, divisor);
        Ok(Self {
            models,
            score_matrix,
            beta,
            copula,
            gumbel_fit,
            divisor,
            cdfs,
        })
    }

    /// Scores `calib` with the trained models and fits the copula.
    pub fn calibrate(
        models: Arc<TrainedModels>,
        calib: &Dataset,
        beta: f64,
        copula: CopulaKind,
        estimator: GumbelEstimator,
        divisor: EcdfDivisor,
    ) -> Result<Self> {
        if calib.n_rows() < MIN_CALIBRATION_ROWS {
            return Err(Error::CalibTooSmall {
                needed: MIN_CALIBRATION_ROWS,
                got: calib.n_rows(),
            });
        }
        let a = models.score_matrix(calib, beta)?;
        Self::from_scores(models, a, beta, copula, estimator, divisor)
    }

    pub fn models(&self) -> &Arc<TrainedModels> {
        &self.models
    }

    pub fn score_matrix(&self) -> &ScoreMatrix {
        &self.score_matrix
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn copula(&self) -> &CopulaModel {
        &self.copula
    }

    pub fn gumbel_fit(&self) -> Option<&GumbelFit> {
        self.gumbel_fit.as_ref()
    }

    pub fn ecdf_divisor(&self) -> EcdfDivisor {
        self.divisor
    }

    pub fn n_targets(&self) -> usize {
        self.score_matrix.n_targets()
    }

    /// Per-target thresholds for a global significance level.
    pub fn calibration(&self, epsilon_g: f64) -> Result<Calibration> {
        let confidence = copula::confidence(&self.copula, epsilon_g, self.n_targets())?;
        copula::thresholds_from_cdfs(&self.cdfs, confidence)
    }

    pub fn point_predictions(&self, x: ArrayView2<'_, f64>) -> Result<PointPredictions> {
        self.models.point_predictions(x)
    }

    /// Boxes `yhat ± alpha_s (exp(mu) + beta)` for precomputed predictions.
    pub fn boxes_with(
        &self,
        points: &PointPredictions,
        calibration: &Calibration,
    ) -> Result<Vec<PredictionBox>> {
        let alpha = &calibration.thresholds;
        points
            .yhat
            .axis_iter(Axis(0))
            .zip(points.mu.axis_iter(Axis(0)))
            .map(|(yhat, mu)| {
                let mut lower = Vec::with_capacity(alpha.len());
                let mut upper = Vec::with_capacity(alpha.len());
                for ((c, m), a) in yhat.iter().zip(mu).zip(alpha) {
                    let half = a * (m.exp() + self.beta);
                    if half > 0.0 {
                        // Rounded outward so a point whose score equals the
                        // threshold stays inside after the round trip.
                        let half = half * (1.0 + 4.0 * f64::EPSILON);
                        lower.push((c - half).next_down());
                        upper.push((c + half).next_up());
                    } else {
                        lower.push(c - half);
                        upper.push(c + half);
                    }
                }
                PredictionBox::new(lower, upper)
            })
            .collect()
    }

    pub fn predict_boxes(&self, x: ArrayView2<'_, f64>, epsilon_g: f64) -> Result<Vec<PredictionBox>> {
        let calibration = self.calibration(epsilon_g)?;
        self.boxes_with(&self.point_predictions(x)?, &calibration)
    }

    pub fn predict_box(&self, x: &[f64], epsilon_g: f64) -> Result<PredictionBox> {
        let row = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Ok(self.predict_boxes(row, epsilon_g)?.remove(0))
    }
}

/// Trains both models on `train_idx` rows and calibrates on `calib_idx` rows.
pub fn build(
    data: &Dataset,
    train_idx: &[usize],
    calib_idx: &[usize],
    config: &BuildConfig,
) -> Result<ConformalPredictor> {
    let mut seen = vec![false; data.n_rows()];
    for &i in train_idx {
        if i < seen.len() {
            seen[i] = true;
        }
    }
    if calib_idx.iter().any(|&i| i < seen.len() && seen[i]) {
        return Err(Error::InvalidParameter(
            "training and calibration rows overlap".into(),
        ));
    }
    if calib_idx.len() < MIN_CALIBRATION_ROWS {
        return Err(Error::CalibTooSmall {
            needed: MIN_CALIBRATION_ROWS,
            got: calib_idx.len(),
        });
    }
    let train = data.select_rows(train_idx)?;
    let calib = data.select_rows(calib_idx)?;
    let models = TrainedModels::fit(
        &train,
        &config.regressor,
        &config.error_model,
        config.residual_floor,
        config.seed,
    )?;
    ConformalPredictor::calibrate(
        Arc::new(models),
        &calib,
        config.beta,
        config.copula,
        config.gumbel_estimator,
        config.ecdf_divisor,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth_dataset;
    use crate::regress::RidgeModel;
    use ndarray::{array, Array1};

    fn zero_models(d: usize, m: usize) -> Arc<TrainedModels> {
        let zero = || {
            FittedModel::Ridge(RidgeModel::from_parts(Array2::zeros((d, m)), Array1::zeros(m)).unwrap())
        };
        let x = Array2::zeros((2, d));
        let y = Array2::zeros((2, m));
        let error_model = regress::fit_error_model(
            &RegressorSpec::Ridge { l2: 1.0 },
            x.view(),
            y.view(),
            y.view(),
            1.0,
            0,
        )
        .unwrap();
        Arc::new(TrainedModels {
            underlying: zero(),
            error_model,
        })
    }

    #[test]
    fn box_geometry() {
        let unit = PredictionBox::new(vec![0.0; 3], vec![1.0; 3]).unwrap();
        assert_eq!(unit.volume(), 1.0);
        let b = PredictionBox::new(vec![-1.0, 0.0], vec![1.0, 3.0]).unwrap();
        assert_eq!(b.volume(), 6.0);
        let flat = PredictionBox::new(vec![0.0, 2.0], vec![1.0, 2.0]).unwrap();
        assert_eq!(flat.volume(), 0.0);

        assert!(b.contains(&[1.0, 0.5]).unwrap());
        assert!(b.contains(&[-1.0, 3.0]).unwrap());
        assert!(!b.contains(&[0.0, 3.5]).unwrap());
        assert!(matches!(b.contains(&[0.0]), Err(Error::LengthMismatch { .. })));
        assert!(PredictionBox::new(vec![], vec![]).is_err());
        assert!(PredictionBox::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn single_target_box_formula() {
        // error model predicts mu = ln(1) = 0 through its intercept
        let models = zero_models(1, 1);
        let a = ScoreMatrix::new(Array2::from_elem((10, 1), 1.0)).unwrap();
        let p = ConformalPredictor::from_scores(
            models,
            a,
            0.1,
            CopulaKind::Independent,
            GumbelEstimator::Tau,
            EcdfDivisor::N,
        )
        .unwrap();
        let b = p.predict_box(&[3.0], 0.1).unwrap();
        assert!((b.lower()[0] + 1.1).abs() < 1e-14 && (b.upper()[0] - 1.1).abs() < 1e-14);
        assert!(b.contains(&[-1.1]).unwrap() && b.contains(&[1.1]).unwrap());
    }

    #[test]
    fn zero_threshold_gives_degenerate_box() {
        let models = zero_models(2, 2);
        let a = ScoreMatrix::new(Array2::zeros((9, 2))).unwrap();
        let p = ConformalPredictor::from_scores(
            models,
            a,
            0.1,
            CopulaKind::Empirical,
            GumbelEstimator::Tau,
            EcdfDivisor::N,
        )
        .unwrap();
        let b = p.predict_box(&[1.0, 1.0], 0.3).unwrap();
        assert_eq!(b.lower(), b.upper());
        assert_eq!(b.volume(), 0.0);
    }

    #[test]
    fn raw_residual_scores_with_zero_mu_and_beta() {
        let data = synth_dataset(60, 2, 3, 0.2, 5).unwrap();
        let train: Vec<usize> = (0..40).collect();
        let calib: Vec<usize> = (40..60).collect();
        let tr = data.select_rows(&train).unwrap();
        let cal = data.select_rows(&calib).unwrap();
        let underlying = regress::fit(&RegressorSpec::Ridge { l2: 0.0 }, tr.features(), tr.targets(), 0).unwrap();
        let models = Arc::new(TrainedModels {
            underlying,
            error_model: zero_models(3, 2).error_model.clone(),
        });
        let a = models.score_matrix(&cal, 0.0).unwrap();
        let yhat = models.underlying.predict(cal.features()).unwrap();
        let raw = (&cal.targets() - &yhat).mapv(f64::abs);
        assert!((&a.view() - &raw).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn duplicated_rows_with_one_neighbour() {
        let base = synth_dataset(30, 2, 2, 0.5, 1).unwrap();
        let idx: Vec<usize> = (0..30).chain(0..30).collect();
        let data = base.select_rows(&idx).unwrap();
        let train: Vec<usize> = (0..30).collect();
        let calib: Vec<usize> = (30..60).collect();
        let mut cfg = BuildConfig::new(
            RegressorSpec::Knn { k: 1 },
            RegressorSpec::Knn { k: 3 },
            CopulaKind::Empirical,
        );
        cfg.seed = 3;
        let p = build(&data, &train, &calib, &cfg).unwrap();
        // Calibration rows are exact copies of training rows.
        assert!(p.score_matrix().view().iter().all(|&v| v == 0.0));
        let b = p.predict_box(&[0.0, 0.0], 0.1).unwrap();
        assert_eq!(b.dim(), 2);
    }

    #[test]
    fn build_checks_inputs() {
        let data = synth_dataset(40, 2, 2, 0.0, 1).unwrap();
        let cfg = BuildConfig::new(
            RegressorSpec::Ridge { l2: 0.1 },
            RegressorSpec::Ridge { l2: 0.1 },
            CopulaKind::Independent,
        );
        let train: Vec<usize> = (0..30).collect();
        assert!(matches!(
            build(&data, &train, &[30, 31, 32], &cfg),
            Err(Error::CalibTooSmall { .. })
        ));
        let calib: Vec<usize> = (25..40).collect();
        assert!(build(&data, &train, &calib, &cfg).is_err());
    }

    #[test]
    fn same_seed_same_predictor() {
        let data = synth_dataset(120, 2, 3, 0.6, 8).unwrap();
        let train: Vec<usize> = (0..90).collect();
        let calib: Vec<usize> = (90..120).collect();
        let mut cfg = BuildConfig::new(
            RegressorSpec::Mlp(regress::MlpParams {
                widths: vec![8, 8],
                dropout: 0.1,
                epochs: 5,
                lr: 1e-2,
                batch: 16,
            }),
            RegressorSpec::Knn { k: 5 },
            CopulaKind::Gumbel,
        );
        cfg.seed = 42;
        let a = build(&data, &train, &calib, &cfg).unwrap();
        let b = build(&data, &train, &calib, &cfg).unwrap();
        assert_eq!(a.models(), b.models());
        assert_eq!(a.score_matrix(), b.score_matrix());
        assert_eq!(a.copula(), b.copula());
        assert_eq!(a.calibration(0.1).unwrap(), b.calibration(0.1).unwrap());
    }

    #[test]
    fn boxes_are_nested_in_significance() {
        let data = synth_dataset(200, 3, 3, 0.7, 2).unwrap();
        let train: Vec<usize> = (0..150).collect();
        let calib: Vec<usize> = (150..200).collect();
        for kind in [CopulaKind::Independent, CopulaKind::Gumbel, CopulaKind::Empirical] {
            let cfg = BuildConfig::new(
                RegressorSpec::Ridge { l2: 1e-3 },
                RegressorSpec::Knn { k: 7 },
                kind,
            );
            let p = build(&data, &train, &calib, &cfg).unwrap();
            let x = array![[0.3, -1.0, 2.0]];
            let mut prev: Option<PredictionBox> = None;
            for eps in [0.9, 0.5, 0.2, 0.1, 0.05, 0.01] {
                let b = p.predict_boxes(x.view(), eps).unwrap().remove(0);
                if let Some(prev) = &prev {
                    assert!(b.encloses(prev), "{kind} at {eps}");
                }
                prev = Some(b);
            }
        }
    }
}
