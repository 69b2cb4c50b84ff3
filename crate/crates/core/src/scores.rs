//! Nonconformity scores, empirical CDFs and pseudo-observations.

use std::io::Write;

use ndarray::{Array2, ArrayView1, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Sensitivity parameter added to `exp(mu)` in normalized scores.
pub const DEFAULT_BETA: f64 = 0.1;

/// `|y - yhat|`.
pub fn standard_score(y: f64, yhat: f64) -> f64 {
    (y - yhat).abs()
}

/// `|y - yhat| / (exp(mu) + beta)`.
pub fn normalized_score(y: f64, yhat: f64, mu: f64, beta: f64) -> f64 {
    (y - yhat).abs() / (mu.exp() + beta)
}

/// Calibration nonconformity scores: one row per calibration example, one
/// column per target. Entries are finite and non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    scores: Array2<f64>,
}

impl ScoreMatrix {
    pub fn new(scores: Array2<f64>) -> Result<Self> {
        if scores.nrows() == 0 || scores.ncols() == 0 {
            return Err(Error::EmptySample);
        }
        if let Some(((r, c), v)) = scores
            .indexed_iter()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::DomainError(format!(
                "score ({r}, {c}) = {v} is not a finite non-negative number"
            )));
        }
        Ok(Self { scores })
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.scores.view()
    }

    pub fn n_rows(&self) -> usize {
        self.scores.nrows()
    }

    pub fn n_targets(&self) -> usize {
        self.scores.ncols()
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.scores.column(j)
    }

    /// One header row of target names, then one row per calibration example.
    pub fn write_csv<W: Write>(&self, target_names: &[String], out: W) -> Result<()> {
        if target_names.len() != self.n_targets() {
            return Err(Error::DimensionMismatch {
                context: "score matrix header",
                expected: self.n_targets(),
                got: target_names.len(),
            });
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(target_names)?;
        for row in self.scores.rows() {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds the score matrix with entries `|y - yhat| / (exp(mu) + beta)`.
pub fn score_matrix<'a>(
    y_cal: ArrayView2<'a, f64>,
    yhat_cal: ArrayView2<'a, f64>,
    mu_cal: ArrayView2<'a, f64>,
    beta: f64,
) -> Result<ScoreMatrix> {
    for (other, context) in [(yhat_cal, "predicted calibration targets"), (mu_cal, "calibration mu")] {
        if other.dim() != y_cal.dim() {
            return Err(Error::DimensionMismatch {
                context,
                expected: y_cal.len(),
                got: other.len(),
            });
        }
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!("beta must be >= 0, got {beta}")));
    }
    let scores = Zip::from(&y_cal)
        .and(&yhat_cal)
        .and(&mu_cal)
        .map_collect(|&y, &yh, &mu| normalized_score(y, yh, mu, beta));
    ScoreMatrix::new(scores)
}

/// Denominator used by [`EmpiricalCdf`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EcdfDivisor {
    /// Divide counts by the sample size, so the largest value maps to 1.
    #[default]
    N,
    /// Divide by sample size plus one (more conservative quantiles).
    NPlusOne,
}

impl EcdfDivisor {
    fn denominator(self, n: usize) -> f64 {
        match self {
            EcdfDivisor::N => n as f64,
            EcdfDivisor::NPlusOne => (n + 1) as f64,
        }
    }
}

/// Right-continuous step CDF of a finite sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
    divisor: EcdfDivisor,
}

impl EmpiricalCdf {
    pub fn new(values: impl IntoIterator<Item = f64>, divisor: EcdfDivisor) -> Result<Self> {
        let mut sorted: Vec<f64> = values.into_iter().collect();
        if sorted.is_empty() {
            return Err(Error::EmptySample);
        }
        if sorted.iter().any(|v| v.is_nan()) {
            return Err(Error::DomainError("NaN in ECDF sample".into()));
        }
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted, divisor })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted_values(&self) -> &[f64] {
        &self.sorted
    }

    fn count_le(&self, x: f64) -> usize {
        self.sorted.partition_point(|&v| v <= x)
    }

    /// Fraction of sample values `<= x`.
    pub fn eval(&self, x: f64) -> f64 {
        self.count_le(x) as f64 / self.divisor.denominator(self.sorted.len())
    }

    /// Smallest sample value `v` with `eval(v) >= p`; the minimum for `p = 0`.
    ///
    /// With [`EcdfDivisor::NPlusOne`] levels above `N / (N + 1)` are not
    /// attained by any sample value and saturate at the maximum.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::DomainError(format!(
                "quantile level must lie in [0, 1], got {p}"
            )));
        }
        let n = self.sorted.len();
        let (mut lo, mut hi) = (0, n);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.eval(self.sorted[mid]) < p {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        Ok(self.sorted[lo.min(n - 1)])
    }
}

/// Marginal ECDF transforms of a score matrix, entries in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoObservations {
    u: Array2<f64>,
}

impl PseudoObservations {
    /// Wraps an existing matrix of pseudo-observations.
    pub fn new(u: Array2<f64>) -> Result<Self> {
        if u.nrows() == 0 || u.ncols() == 0 {
            return Err(Error::EmptySample);
        }
        if u.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
            return Err(Error::DomainError(
                "pseudo-observations must lie in (0, 1]".into(),
            ));
        }
        Ok(Self { u })
    }

    /// Replaces each entry by its column's ECDF value (max rank over the
    /// divisor, so ties share a value).
    pub fn from_sample(data: ArrayView2<'_, f64>, divisor: EcdfDivisor) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::EmptySample);
        }
        let mut u = Array2::zeros(data.dim());
        for (src, mut dst) in data.columns().into_iter().zip(u.columns_mut()) {
            let cdf = EmpiricalCdf::new(src.iter().copied(), divisor)?;
            Zip::from(&mut dst).and(&src).for_each(|d, &s| *d = cdf.eval(s));
        }
        Ok(Self { u })
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.u.view()
    }

    pub fn n_rows(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_targets(&self) -> usize {
        self.u.ncols()
    }

    /// Largest coordinate of each row.
    pub fn row_maxima(&self) -> Vec<f64> {
        self.u
            .rows()
            .into_iter()
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }
}

pub fn pseudo_observations(a: &ScoreMatrix, divisor: EcdfDivisor) -> PseudoObservations {
    PseudoObservations::from_sample(a.view(), divisor)
        .expect("score matrices are non-empty and finite")
}

/// Conformal p-value of a candidate score: the calibration scores at least
/// as large as the candidate, plus the candidate itself, over `N + 1`.
pub fn p_value(calib_scores: &[f64], candidate_score: f64) -> Result<f64> {
    if calib_scores.is_empty() {
        return Err(Error::EmptySample);
    }
    let ge = calib_scores.iter().filter(|&&a| a >= candidate_score).count();
    Ok((ge + 1) as f64 / (calib_scores.len() + 1) as f64)
}
