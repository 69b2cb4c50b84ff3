//! Gumbel copula: dependence estimation and bivariate density.

use serde::{Deserialize, Serialize};

use crate::scores::PseudoObservations;
use crate::{Error, Result};

use super::kendall::kendall_tau;

/// Upper end of the admissible parameter range. At double precision a
/// Gumbel copula with this parameter is indistinguishable from the
/// comonotone copula.
pub const THETA_MAX: f64 = 50.0;

/// Minimum number of calibration rows for parameter estimation.
pub const MIN_FIT_ROWS: usize = 8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GumbelEstimator {
    /// Invert the mean pairwise Kendall tau: `theta = 1 / (1 - tau)`.
    #[default]
    Tau,
    /// Maximize the pairwise composite pseudo-log-likelihood.
    Mple,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GumbelWarning {
    /// Estimated dependence reached the comonotone limit; theta was clamped
    /// to [`THETA_MAX`].
    DegenerateDependence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GumbelFit {
    pub theta: f64,
    pub estimator: GumbelEstimator,
    /// Mean Kendall tau over all target pairs.
    pub mean_tau: f64,
    pub warning: Option<GumbelWarning>,
}

/// `log c(u, v; theta)` for the bivariate Gumbel copula, `u, v` in `(0, 1)`.
pub fn gumbel_log_density(u: f64, v: f64, theta: f64) -> f64 {
    let x = -u.ln();
    let y = -v.ln();
    let s = x.powf(theta) + y.powf(theta);
    let a = s.powf(1.0 / theta);
    -a + (theta - 1.0) * (x.ln() + y.ln()) + x + y + (1.0 / theta - 2.0) * s.ln()
        + (a + theta - 1.0).ln()
}

pub fn gumbel_density(u: f64, v: f64, theta: f64) -> f64 {
    gumbel_log_density(u, v, theta).exp()
}

/// Sum over target pairs and rows of the bivariate log-density.
/// Pseudo-observations are rescaled by `N / (N + 1)` so that none equals 1.
pub fn pairwise_log_likelihood(u: &PseudoObservations, theta: f64) -> f64 {
    let view = u.view();
    let n = view.nrows() as f64;
    let shrink = n / (n + 1.0);
    let m = view.ncols();
    let mut total = 0.0;
    for j in 0..m {
        for k in j + 1..m {
            for row in view.rows() {
                total += gumbel_log_density(row[j] * shrink, row[k] * shrink, theta);
            }
        }
    }
    total
}

/// Golden-section search for the maximum of a unimodal `f` on `[a, b]`.
pub fn golden_section_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

fn mean_pairwise_tau(u: &PseudoObservations) -> Result<f64> {
    let view = u.view();
    let m = view.ncols();
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for j in 0..m {
        let xj = view.column(j).to_vec();
        for k in j + 1..m {
            sum += kendall_tau(&xj, &view.column(k).to_vec())?;
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// Estimates the Gumbel parameter from pseudo-observations with at least
/// [`MIN_FIT_ROWS`] rows and two columns. The result lies in `[1, THETA_MAX]`.
pub fn fit_gumbel(u: &PseudoObservations, method: GumbelEstimator) -> Result<GumbelFit> {
    if u.n_rows() < MIN_FIT_ROWS {
        return Err(Error::TooFewRows {
            needed: MIN_FIT_ROWS,
            got: u.n_rows(),
        });
    }
    if u.n_targets() < 2 {
        return Err(Error::InvalidParameter(
            "Gumbel estimation needs at least two targets".into(),
        ));
    }
    let mean_tau = mean_pairwise_tau(u)?;

    let (theta, warning) = match method {
        GumbelEstimator::Tau => {
            if mean_tau >= 1.0 - 1.0 / THETA_MAX {
                (THETA_MAX, Some(GumbelWarning::DegenerateDependence))
            } else {
                ((1.0 / (1.0 - mean_tau)).max(1.0), None)
            }
        }
        GumbelEstimator::Mple => {
            let theta = maximize_pairwise_likelihood(u);
            let warning =
                (theta >= THETA_MAX * (1.0 - 1e-6)).then_some(GumbelWarning::DegenerateDependence);
            (theta, warning)
        }
    };

    Ok(GumbelFit {
        theta,
        estimator: method,
        mean_tau,
        warning,
    })
}

const GRID_POINTS: usize = 64;

/// Log-spaced grid scan over `[1, THETA_MAX]` followed by golden-section
/// refinement between the neighbours of the best grid point.
fn maximize_pairwise_likelihood(u: &PseudoObservations) -> f64 {
    let objective = |theta: f64| {
        let ll = pairwise_log_likelihood(u, theta);
        if ll.is_nan() {
            f64::NEG_INFINITY
        } else {
            ll
        }
    };
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| (THETA_MAX.ln() * i as f64 / (GRID_POINTS - 1) as f64).exp())
        .collect();
    let values: Vec<f64> = grid.iter().map(|&t| objective(t)).collect();
    let best = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(GRID_POINTS - 1)];
    let (theta, value) = golden_section_max(objective, lo, hi, 1e-7);
    if value >= values[best] {
        theta.clamp(1.0, THETA_MAX)
    } else {
        grid[best]
    }
}
