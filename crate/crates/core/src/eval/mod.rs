//! Validity and efficiency evaluation over cross-validation folds.

mod plot;

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

pub use plot::{validity_svg, volume_boxplot_svg};

use crate::conformal::{ConformalPredictor, PointPredictions, PredictionBox, TrainedModels, MIN_CALIBRATION_ROWS};
use crate::copula::{CopulaKind, GumbelEstimator, GumbelWarning};
use crate::dataio::{make_folds, standardize, Dataset, FoldParams, Standardizer};
use crate::regress::{MlpParams, RegressorSpec, DEFAULT_RESIDUAL_FLOOR};
use crate::scores::{EcdfDivisor, DEFAULT_BETA};
use crate::{Error, Result};

/// Significance level at which efficiency (median volume) is reported.
pub const REFERENCE_EPSILON: f64 = 0.1;

/// `0.01` followed by `0.05, 0.10, ..., 0.95`.
pub fn default_grid() -> Vec<f64> {
    std::iter::once(0.01)
        .chain((1..=19).map(|k| k as f64 / 20.0))
        .collect()
}

/// Empirical coverage of the true targets at each significance level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityCurve {
    pub grid: Vec<f64>,
    pub coverage: Vec<f64>,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("significance grid is empty".into()));
    }
    if grid.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
        return Err(Error::InvalidParameter(
            "significance grid values must lie in (0, 1)".into(),
        ));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(
            "significance grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Fraction of rows of `targets` inside the matching box.
pub fn coverage(boxes: &[PredictionBox], targets: ArrayView2<'_, f64>) -> Result<f64> {
    if boxes.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    if boxes.len() != targets.nrows() {
        return Err(Error::LengthMismatch {
            left: boxes.len(),
            right: targets.nrows(),
        });
    }
    let mut hits = 0usize;
    for (b, y) in boxes.iter().zip(targets.rows()) {
        if b.contains(&y.to_vec())? {
            hits += 1;
        }
    }
    Ok(hits as f64 / boxes.len() as f64)
}

fn curve_from_points(
    predictor: &ConformalPredictor,
    points: &PointPredictions,
    targets: ArrayView2<'_, f64>,
    grid: &[f64],
) -> Result<ValidityCurve> {
    check_grid(grid)?;
    let coverage = grid
        .iter()
        .map(|&eps| {
            let cal = predictor.calibration(eps)?;
            coverage(&predictor.boxes_with(points, &cal)?, targets)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ValidityCurve {
        grid: grid.to_vec(),
        coverage,
    })
}

pub fn validity_curve(
    predictor: &ConformalPredictor,
    test: &Dataset,
    grid: &[f64],
) -> Result<ValidityCurve> {
    let points = predictor.point_predictions(test.features())?;
    curve_from_points(predictor, &points, test.targets(), grid)
}

/// Mean of `coverage - (1 - eps_g)` over the grid, in percent. Negative
/// values mean under-coverage.
pub fn validity_gap(curve: &ValidityCurve) -> f64 {
    let n = curve.grid.len() as f64;
    curve
        .grid
        .iter()
        .zip(&curve.coverage)
        .map(|(eps, cov)| (cov - (1.0 - eps)) * 100.0)
        .sum::<f64>()
        / n
}

/// Median; the mean of the two central values for even counts.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

pub fn efficiency_median_volume(
    predictor: &ConformalPredictor,
    test: &Dataset,
    epsilon_g: f64,
) -> Result<f64> {
    let boxes = predictor.predict_boxes(test.features(), epsilon_g)?;
    if boxes.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    median(&boxes.iter().map(PredictionBox::volume).collect::<Vec<_>>())
}

/// Box-plot statistics (whiskers at the most extreme points within 1.5 IQR).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub whisker_low: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_high: f64,
    pub count: usize,
}

fn linear_quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q1 = linear_quantile(&v, 0.25);
        let q3 = linear_quantile(&v, 0.75);
        let fence = 1.5 * (q3 - q1);
        let whisker_low = *v.iter().find(|&&x| x >= q1 - fence).unwrap_or(&v[0]);
        let whisker_high = *v.iter().rev().find(|&&x| x <= q3 + fence).unwrap_or(&v[v.len() - 1]);
        Some(Self {
            whisker_low,
            q1,
            median: linear_quantile(&v, 0.5),
            q3,
            whisker_high,
            count: v.len(),
        })
    }
}

/// Protocol parameters of a cross-validated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSettings {
    pub regressor: RegressorSpec,
    pub error_model: RegressorSpec,
    pub beta: f64,
    pub copulas: Vec<CopulaKind>,
    pub gumbel_estimator: GumbelEstimator,
    pub epsilon_grid: Vec<f64>,
    pub fold_count: usize,
    pub calibration_fraction: f64,
    pub seed: u64,
    pub residual_floor: f64,
    pub ecdf_divisor: EcdfDivisor,
    /// Worker threads for fold-level parallelism.
    #[serde(default = "one")]
    pub jobs: usize,
}

fn one() -> usize {
    1
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            regressor: RegressorSpec::Mlp(MlpParams::default()),
            error_model: RegressorSpec::Mlp(MlpParams::default()),
            beta: DEFAULT_BETA,
            copulas: vec![CopulaKind::Independent, CopulaKind::Gumbel, CopulaKind::Empirical],
            gumbel_estimator: GumbelEstimator::default(),
            epsilon_grid: default_grid(),
            fold_count: 10,
            calibration_fraction: 0.1,
            seed: 0,
            residual_floor: DEFAULT_RESIDUAL_FLOOR,
            ecdf_divisor: EcdfDivisor::default(),
            jobs: 1,
        }
    }
}

impl ExperimentSettings {
    pub fn validate(&self) -> Result<()> {
        self.regressor.validate()?;
        self.error_model.validate()?;
        if self.copulas.is_empty() {
            return Err(Error::InvalidParameter("at least one copula is required".into()));
        }
        check_grid(&self.epsilon_grid)?;
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.fold_count < 2 {
            return Err(Error::InvalidParameter("fold_count must be at least 2".into()));
        }
        if !(self.calibration_fraction > 0.0 && self.calibration_fraction < 1.0) {
            return Err(Error::InvalidParameter(
                "calibration_fraction must lie in (0, 1)".into(),
            ));
        }
        if !(self.residual_floor > 0.0 && self.residual_floor.is_finite()) {
            return Err(Error::InvalidParameter("residual_floor must be positive".into()));
        }
        if self.jobs == 0 {
            return Err(Error::InvalidParameter("jobs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopulaResult {
    pub copula: CopulaKind,
    pub curve: ValidityCurve,
    /// Percent.
    pub validity_gap: f64,
    /// Median box volume at [`REFERENCE_EPSILON`], standardized target units.
    pub median_volume: f64,
    pub epsilon_t_at_reference: f64,
    pub theta: Option<f64>,
    pub gumbel_warning: Option<GumbelWarning>,
    #[serde(skip)]
    pub volumes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub index: usize,
    pub n_train: usize,
    pub n_calib: usize,
    pub n_test: usize,
    pub scaler: Standardizer,
    pub elapsed_seconds: f64,
    pub results: Vec<CopulaResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopulaSummary {
    pub copula: CopulaKind,
    pub folds: usize,
    pub gap_mean: f64,
    pub gap_std: f64,
    pub median_volume_mean: f64,
    pub median_volume_std: f64,
    /// Mean coverage over folds at each grid point.
    pub mean_coverage: Vec<f64>,
    /// Box-plot statistics of all test-point volumes at the reference level.
    pub volume_box: Option<BoxStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub settings: ExperimentSettings,
    pub n_rows: usize,
    pub n_features: usize,
    pub target_names: Vec<String>,
    pub folds: Vec<FoldReport>,
    pub summary: Vec<CopulaSummary>,
    pub elapsed_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed ^ (fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Evaluates every configured copula on one predictor's score matrix.
pub fn evaluate_copulas(
    models: Arc<TrainedModels>,
    calib: &Dataset,
    test: &Dataset,
    settings: &ExperimentSettings,
) -> Result<Vec<CopulaResult>> {
    if test.n_rows() == 0 {
        return Err(Error::EmptyTestSet);
    }
    let scores = models.score_matrix(calib, settings.beta)?;
    let points = models.point_predictions(test.features())?;
    settings
        .copulas
        .iter()
        .map(|&kind| {
            let predictor = ConformalPredictor::from_scores(
                models.clone(),
                scores.clone(),
                settings.beta,
                kind,
                settings.gumbel_estimator,
                settings.ecdf_divisor,
            )?;
            let curve = curve_from_points(&predictor, &points, test.targets(), &settings.epsilon_grid)?;
            let reference = predictor.calibration(REFERENCE_EPSILON)?;
            let volumes: Vec<f64> = predictor
                .boxes_with(&points, &reference)?
                .iter()
                .map(PredictionBox::volume)
                .collect();
            Ok(CopulaResult {
                copula: kind,
                validity_gap: validity_gap(&curve),
                curve,
                median_volume: median(&volumes)?,
                epsilon_t_at_reference: reference.confidence.epsilon_t,
                theta: match predictor.copula() {
                    crate::copula::CopulaModel::Gumbel { theta } => Some(*theta),
                    _ => None,
                },
                gumbel_warning: predictor.gumbel_fit().and_then(|f| f.warning),
                volumes,
            })
        })
        .collect()
}

fn run_fold(
    data: &Dataset,
    fold: &crate::dataio::Fold,
    index: usize,
    settings: &ExperimentSettings,
) -> Result<FoldReport> {
    let start = Instant::now();
    let (scaled, scaler) = standardize(data, &fold.train)?;
    let train = scaled.select_rows(&fold.train)?;
    let calib = scaled.select_rows(&fold.calib)?;
    let test = scaled.select_rows(&fold.test)?;
    let models = TrainedModels::fit(
        &train,
        &settings.regressor,
        &settings.error_model,
        settings.residual_floor,
        fold_seed(settings.seed, index),
    )?;
    let results = evaluate_copulas(Arc::new(models), &calib, &test, settings)?;
    Ok(FoldReport {
        index,
        n_train: fold.train.len(),
        n_calib: fold.calib.len(),
        n_test: fold.test.len(),
        scaler,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        results,
    })
}

/// Runs the k-fold protocol: per fold, standardize on the proper training
/// rows, train both models once, then calibrate and evaluate every copula.
pub fn run_experiment(data: &Dataset, settings: &ExperimentSettings) -> Result<ExperimentReport> {
    settings.validate()?;
    let start = Instant::now();
    let plan = make_folds(
        data.n_rows(),
        FoldParams {
            fold_count: settings.fold_count,
            calibration_fraction: settings.calibration_fraction,
            seed: settings.seed,
            min_calibration: MIN_CALIBRATION_ROWS.max(data.n_targets() + 2),
        },
    )?;

    let k = plan.folds.len();
    let slots: Mutex<Vec<Option<Result<FoldReport>>>> = Mutex::new((0..k).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = settings.jobs.min(k);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= k {
                    break;
                }
                let result = run_fold(data, &plan.folds[i], i, settings);
                slots.lock().expect("fold result lock")[i] = Some(result);
            });
        }
    });

    let mut folds = Vec::with_capacity(k);
    for (index, slot) in slots.into_inner().expect("fold result lock").into_iter().enumerate() {
        match slot.expect("every fold is processed") {
            Ok(f) => folds.push(f),
            Err(e) => {
                return Err(Error::Fold {
                    index,
                    source: Box::new(e),
                })
            }
        }
    }

    let summary = summarize(&folds, settings);
    Ok(ExperimentReport {
        settings: settings.clone(),
        n_rows: data.n_rows(),
        n_features: data.n_features(),
        target_names: data.target_names().to_vec(),
        folds,
        summary,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        config: None,
    })
}

fn summarize(folds: &[FoldReport], settings: &ExperimentSettings) -> Vec<CopulaSummary> {
    settings
        .copulas
        .iter()
        .enumerate()
        .map(|(ci, &kind)| {
            let results: Vec<&CopulaResult> = folds.iter().map(|f| &f.results[ci]).collect();
            let gaps: Vec<f64> = results.iter().map(|r| r.validity_gap).collect();
            let vols: Vec<f64> = results.iter().map(|r| r.median_volume).collect();
            let (gap_mean, gap_std) = mean_std(&gaps);
            let (median_volume_mean, median_volume_std) = mean_std(&vols);
            let mean_coverage = (0..settings.epsilon_grid.len())
                .map(|g| results.iter().map(|r| r.curve.coverage[g]).sum::<f64>() / results.len() as f64)
                .collect();
            let pooled: Vec<f64> = results.iter().flat_map(|r| r.volumes.iter().copied()).collect();
            CopulaSummary {
                copula: kind,
                folds: results.len(),
                gap_mean,
                gap_std,
                median_volume_mean,
                median_volume_std,
                mean_coverage,
                volume_box: BoxStats::from_values(&pooled),
            }
        })
        .collect()
}

/// One row per (fold, copula, significance level). The reference-level
/// median volume is repeated on every row of its fold and copula.
pub fn write_curves_csv<W: Write>(report: &ExperimentReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["fold", "copula", "epsilon_g", "coverage", "median_volume_at_0.1"])?;
    for fold in &report.folds {
        for r in &fold.results {
            for (eps, cov) in r.curve.grid.iter().zip(&r.curve.coverage) {
                w.write_record([
                    fold.index.to_string(),
                    r.copula.to_string(),
                    eps.to_string(),
                    cov.to_string(),
                    r.median_volume.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Plain-text table: validity gap and median volume per copula.
pub fn summary_table(report: &ExperimentReport) -> String {
    let mut s = format!(
        "{:<12} {:>22} {:>28}\n",
        "copula", "validity gap (%)", "median volume (eps=0.1)"
    );
    for c in &report.summary {
        s.push_str(&format!(
            "{:<12} {:>22} {:>28}\n",
            c.copula.as_str(),
            format!("{:.2} ± {:.2}", c.gap_mean, c.gap_std),
            format!("{:.4} ± {:.4}", c.median_volume_mean, c.median_volume_std),
        ));
    }
    s
}
