use std::path::{Path, PathBuf};

use copula_conformal::copula::{CopulaKind, GumbelEstimator};
use copula_conformal::eval::{default_grid, ExperimentSettings};
use copula_conformal::regress::{MlpParams, RegressorSpec, DEFAULT_RESIDUAL_FLOOR};
use copula_conformal::scores::{EcdfDivisor, DEFAULT_BETA};
use serde::{Deserialize, Serialize};

/// Experiment description read from a JSON file. Relative paths resolve
/// against the directory holding the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub targets: Vec<String>,
    #[serde(default = "default_mlp")]
    pub regressor: RegressorSpec,
    #[serde(default = "default_mlp")]
    pub error_model: RegressorSpec,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_copulas")]
    pub copulas: Vec<CopulaKind>,
    #[serde(default)]
    pub gumbel_estimator: GumbelEstimator,
    #[serde(default = "default_grid")]
    pub epsilon_grid: Vec<f64>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_calibration_fraction")]
    pub calibration_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub ecdf_divisor: EcdfDivisor,
    #[serde(default = "default_residual_floor")]
    pub residual_floor: f64,
}

fn default_mlp() -> RegressorSpec {
    RegressorSpec::Mlp(MlpParams::default())
}

fn default_beta() -> f64 {
    DEFAULT_BETA
}

fn default_copulas() -> Vec<CopulaKind> {
    vec![CopulaKind::Independent, CopulaKind::Gumbel, CopulaKind::Empirical]
}

fn default_folds() -> usize {
    10
}

fn default_calibration_fraction() -> f64 {
    0.1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_residual_floor() -> f64 {
    DEFAULT_RESIDUAL_FLOOR
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("invalid config: {e}"))
    }

    /// Reads the file and makes relative paths absolute w.r.t. its directory.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.dataset.is_relative() {
            cfg.dataset = base.join(&cfg.dataset);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn settings(&self, jobs: usize) -> ExperimentSettings {
        ExperimentSettings {
            regressor: self.regressor.clone(),
            error_model: self.error_model.clone(),
            beta: self.beta,
            copulas: self.copulas.clone(),
            gumbel_estimator: self.gumbel_estimator,
            epsilon_grid: self.epsilon_grid.clone(),
            fold_count: self.folds,
            calibration_fraction: self.calibration_fraction,
            seed: self.seed,
            residual_floor: self.residual_floor,
            ecdf_divisor: self.ecdf_divisor,
            jobs,
        }
    }

    pub fn validate(&self, jobs: usize) -> Result<(), String> {
        if self.targets.is_empty() {
            return Err("invalid config: `targets` must name at least one column".into());
        }
        self.settings(jobs)
            .validate()
            .map_err(|e| format!("invalid config: {e}"))?;
        if !self.dataset.is_file() {
            return Err(format!("dataset file not found: {}", self.dataset.display()));
        }
        Ok(())
    }
}
