//! Copulas linking per-target score distributions, and the calibration of a
//! shared per-target significance level from a global one.
//!
//! With equal per-target levels `eps_t`, the hyper-rectangle built from the
//! `1 - eps_t` score quantiles has joint coverage `C(1 - eps_t, ..., 1 - eps_t)`.
//! Each variant solves `C(t, ..., t) = 1 - eps_g` for `t = 1 - eps_t`:
//!
//! - independent: `t = (1 - eps_g)^(1/m)`;
//! - Gumbel: `t = (1 - eps_g)^(m^(-1/theta))`;
//! - empirical: the diagonal of the empirical copula is the ECDF of row
//!   maxima of the pseudo-observations, so `t` is found by bisection and
//!   snapped to the smallest row maximum reaching `1 - eps_g`.

mod gumbel;
mod kendall;
pub mod sampler;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

pub use gumbel::{
    fit_gumbel, golden_section_max, gumbel_density, gumbel_log_density, pairwise_log_likelihood,
    GumbelEstimator, GumbelFit, GumbelWarning, MIN_FIT_ROWS, THETA_MAX,
};
pub use kendall::kendall_tau;

use crate::scores::{EcdfDivisor, EmpiricalCdf, PseudoObservations, ScoreMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum CopulaModel {
    /// Product copula.
    Independent,
    /// Gumbel copula, `theta >= 1`.
    Gumbel { theta: f64 },
    /// Empirical copula of the stored pseudo-observations.
    Empirical(PseudoObservations),
}

impl CopulaModel {
    pub fn gumbel(theta: f64) -> Result<Self> {
        if !(theta >= 1.0 && theta.is_finite()) {
            return Err(Error::DomainError(format!(
                "Gumbel theta must be >= 1, got {theta}"
            )));
        }
        Ok(CopulaModel::Gumbel { theta })
    }

    pub fn kind(&self) -> CopulaKind {
        match self {
            CopulaModel::Independent => CopulaKind::Independent,
            CopulaModel::Gumbel { .. } => CopulaKind::Gumbel,
            CopulaModel::Empirical(_) => CopulaKind::Empirical,
        }
    }
}

/// Copula family selector used in configs and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopulaKind {
    Independent,
    Gumbel,
    Empirical,
}

impl CopulaKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CopulaKind::Independent => "independent",
            CopulaKind::Gumbel => "gumbel",
            CopulaKind::Empirical => "empirical",
        }
    }
}

impl std::fmt::Display for CopulaKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CopulaKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent" => Ok(CopulaKind::Independent),
            "gumbel" => Ok(CopulaKind::Gumbel),
            "empirical" => Ok(CopulaKind::Empirical),
            other => Err(Error::InvalidParameter(format!(
                "unknown copula `{other}` (expected independent, gumbel or empirical)"
            ))),
        }
    }
}

fn check_unit_vector(u: &[f64]) -> Result<()> {
    if u.is_empty() {
        return Err(Error::EmptySample);
    }
    if let Some(v) = u.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::DomainError(format!("copula argument {v} outside [0, 1]")));
    }
    Ok(())
}

/// Evaluates the copula at `u`.
pub fn copula_cdf(model: &CopulaModel, u: &[f64]) -> Result<f64> {
    check_unit_vector(u)?;
    if let CopulaModel::Empirical(pseudo) = model {
        if pseudo.n_targets() != u.len() {
            return Err(Error::DimensionMismatch {
                context: "empirical copula argument",
                expected: pseudo.n_targets(),
                got: u.len(),
            });
        }
        return Ok(empirical_cdf(pseudo.view(), u));
    }
    if u.contains(&0.0) {
        return Ok(0.0);
    }
    // A single coordinate below 1 is the marginal itself.
    let mut below = u.iter().filter(|&&v| v < 1.0);
    match (below.next(), below.next()) {
        (None, _) => return Ok(1.0),
        (Some(&v), None) => return Ok(v),
        _ => {}
    }
    Ok(match model {
        CopulaModel::Independent => u.iter().product(),
        CopulaModel::Gumbel { theta } => {
            let logs: Vec<f64> = u.iter().map(|v| -v.ln()).collect();
            let sum_pow: f64 = logs.iter().map(|x| x.powf(*theta)).sum();
            // The theta-norm lies between the max-norm and the 1-norm.
            let max = logs.iter().copied().fold(0.0, f64::max);
            let l1: f64 = logs.iter().sum();
            let norm = sum_pow.powf(1.0 / theta).clamp(max, l1);
            (-norm).exp()
        }
        CopulaModel::Empirical(_) => unreachable!(),
    })
}

fn empirical_cdf(pseudo: ArrayView2<'_, f64>, u: &[f64]) -> f64 {
    let hits = pseudo
        .rows()
        .into_iter()
        .filter(|row| row.iter().zip(u).all(|(ui, uj)| ui <= uj))
        .count();
    hits as f64 / pseudo.nrows() as f64
}

/// Lower and upper Frechet-Hoeffding bounds `(W(u), M(u))`.
pub fn frechet_bounds(u: &[f64]) -> (f64, f64) {
    let m = u.len() as f64;
    let lower = (u.iter().sum::<f64>() - m + 1.0).max(0.0);
    let upper = u.iter().copied().fold(1.0, f64::min);
    (lower, upper)
}

/// Global and shared per-target significance levels, plus the marginal
/// level `1 - eps_t` at which score quantiles are read.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSpec {
    pub epsilon_g: f64,
    pub epsilon_t: f64,
    pub marginal_level: f64,
}

fn check_epsilon(epsilon_g: f64) -> Result<()> {
    if !(epsilon_g > 0.0 && epsilon_g < 1.0) {
        return Err(Error::DomainError(format!(
            "significance level must lie in (0, 1), got {epsilon_g}"
        )));
    }
    Ok(())
}

/// Solves `(1 - eps_t) = (1 - eps_g)^exponent` without cancellation.
fn closed_form(epsilon_g: f64, exponent: f64) -> ConfidenceSpec {
    let log_level = (-epsilon_g).ln_1p() * exponent;
    let marginal_level = if exponent == 1.0 {
        1.0 - epsilon_g
    } else {
        log_level.exp()
    };
    ConfidenceSpec {
        epsilon_g,
        epsilon_t: -log_level.exp_m1(),
        marginal_level,
    }
}

fn check_targets(m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidParameter("need at least one target".into()));
    }
    Ok(())
}

fn independent_confidence(epsilon_g: f64, m: usize) -> Result<ConfidenceSpec> {
    check_epsilon(epsilon_g)?;
    check_targets(m)?;
    Ok(closed_form(epsilon_g, 1.0 / m as f64))
}

fn gumbel_confidence(epsilon_g: f64, m: usize, theta: f64) -> Result<ConfidenceSpec> {
    check_epsilon(epsilon_g)?;
    check_targets(m)?;
    if theta.is_nan() || theta < 1.0 {
        return Err(Error::DomainError(format!(
            "Gumbel theta must be >= 1, got {theta}"
        )));
    }
    let exponent = if theta == 1.0 {
        1.0 / m as f64
    } else {
        (m as f64).powf(-1.0 / theta)
    };
    Ok(closed_form(epsilon_g, exponent))
}

/// `1 - (1 - eps_g)^(1/m)`.
pub fn independent_epsilon_t(epsilon_g: f64, m: usize) -> Result<f64> {
    independent_confidence(epsilon_g, m).map(|c| c.epsilon_t)
}

/// `1 - (1 - eps_g)^(m^(-1/theta))`.
pub fn gumbel_epsilon_t(epsilon_g: f64, m: usize, theta: f64) -> Result<f64> {
    gumbel_confidence(epsilon_g, m, theta).map(|c| c.epsilon_t)
}

/// Bisection tolerance on the diagonal level before snapping.
const DICHOTOMY_TOL: f64 = 1e-9;

/// Smallest diagonal point `t` with `C_E(t, ..., t) >= 1 - eps_g`, where
/// `C_E(t, ..., t)` is the fraction of rows whose maximum is `<= t`.
fn empirical_diagonal_level(pseudo: &PseudoObservations, epsilon_g: f64) -> f64 {
    let mut maxima = pseudo.row_maxima();
    maxima.sort_by(f64::total_cmp);
    let n = maxima.len() as f64;
    let target = 1.0 - epsilon_g;
    let diagonal = |t: f64| maxima.partition_point(|&v| v <= t) as f64 / n;

    // diagonal(0) = 0 < target and diagonal(1) = 1 >= target.
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > DICHOTOMY_TOL {
        let mid = 0.5 * (lo + hi);
        if diagonal(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }

    // Snap to the step location: the largest row maximum <= hi, then walk
    // down while the previous step still reaches the target.
    let mut idx = maxima.partition_point(|&v| v <= hi);
    debug_assert!(idx > 0);
    idx -= 1;
    loop {
        let level = maxima[idx];
        let prev = maxima[..idx].partition_point(|&v| v < level);
        if prev == 0 || diagonal(maxima[prev - 1]) < target {
            return level;
        }
        idx = prev - 1;
    }
}

fn empirical_confidence(pseudo: &PseudoObservations, epsilon_g: f64) -> Result<ConfidenceSpec> {
    check_epsilon(epsilon_g)?;
    let level = empirical_diagonal_level(pseudo, epsilon_g);
    Ok(ConfidenceSpec {
        epsilon_g,
        epsilon_t: 1.0 - level,
        marginal_level: level,
    })
}

/// Largest `eps_t` with `C_E(1 - eps_t, ..., 1 - eps_t) >= 1 - eps_g`.
pub fn empirical_epsilon_t(pseudo: &PseudoObservations, epsilon_g: f64) -> Result<f64> {
    empirical_confidence(pseudo, epsilon_g).map(|c| c.epsilon_t)
}

/// Per-target levels for the given copula and `m` targets.
pub fn confidence(model: &CopulaModel, epsilon_g: f64, m: usize) -> Result<ConfidenceSpec> {
    match model {
        CopulaModel::Independent => independent_confidence(epsilon_g, m),
        CopulaModel::Gumbel { theta } => gumbel_confidence(epsilon_g, m, *theta),
        CopulaModel::Empirical(pseudo) => {
            if pseudo.n_targets() != m {
                return Err(Error::DimensionMismatch {
                    context: "empirical copula targets",
                    expected: pseudo.n_targets(),
                    got: m,
                });
            }
            empirical_confidence(pseudo, epsilon_g)
        }
    }
}

/// Calibrated per-target score thresholds `alpha_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub confidence: ConfidenceSpec,
    pub thresholds: Vec<f64>,
}

/// Reads every column's ECDF at the marginal level of `confidence`.
pub fn thresholds_from_cdfs(cdfs: &[EmpiricalCdf], confidence: ConfidenceSpec) -> Result<Calibration> {
    let thresholds = cdfs
        .iter()
        .map(|cdf| cdf.quantile(confidence.marginal_level))
        .collect::<Result<Vec<_>>>()?;
    Ok(Calibration {
        confidence,
        thresholds,
    })
}

/// Column ECDFs of a score matrix.
pub fn column_cdfs(a: &ScoreMatrix, divisor: EcdfDivisor) -> Vec<EmpiricalCdf> {
    (0..a.n_targets())
        .map(|j| {
            EmpiricalCdf::new(a.column(j).iter().copied(), divisor)
                .expect("score matrices are non-empty and finite")
        })
        .collect()
}

/// `alpha_s^j = F_j^{-1}(1 - eps_t)` for every target `j`, with `eps_t`
/// derived from `eps_g` by the copula.
pub fn calibrate_thresholds(
    a: &ScoreMatrix,
    model: &CopulaModel,
    epsilon_g: f64,
    divisor: EcdfDivisor,
) -> Result<Calibration> {
    let confidence = confidence(model, epsilon_g, a.n_targets())?;
    thresholds_from_cdfs(&column_cdfs(a, divisor), confidence)
}

/// Fits the requested copula family to a score matrix.
///
/// With a single target all families coincide; Gumbel then uses `theta = 1`.
pub fn fit_copula(
    kind: CopulaKind,
    a: &ScoreMatrix,
    estimator: GumbelEstimator,
    divisor: EcdfDivisor,
) -> Result<(CopulaModel, Option<GumbelFit>)> {
    Ok(match kind {
        CopulaKind::Independent => (CopulaModel::Independent, None),
        CopulaKind::Empirical => (
            CopulaModel::Empirical(crate::scores::pseudo_observations(a, divisor)),
            None,
        ),
        CopulaKind::Gumbel if a.n_targets() == 1 => (CopulaModel::Gumbel { theta: 1.0 }, None),
        CopulaKind::Gumbel => {
            let fit = fit_gumbel(&crate::scores::pseudo_observations(a, divisor), estimator)?;
            (CopulaModel::Gumbel { theta: fit.theta }, Some(fit))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn brute_force_level(pseudo: &PseudoObservations, eps_g: f64) -> f64 {
        let maxima = pseudo.row_maxima();
        let n = maxima.len() as f64;
        let mut sorted = maxima.clone();
        sorted.sort_by(f64::total_cmp);
        for r in sorted {
            let count = maxima.iter().filter(|&&v| v <= r).count() as f64;
            if count / n >= 1.0 - eps_g {
                return r;
            }
        }
        unreachable!()
    }

    #[test]
    fn gumbel_cdf_values() {
        let g1 = CopulaModel::gumbel(1.0).unwrap();
        assert!((copula_cdf(&g1, &[0.5, 0.5]).unwrap() - 0.25).abs() < 1e-15);
        let g2 = CopulaModel::gumbel(2.0).unwrap();
        let expect = 2f64.powf(-2f64.sqrt());
        assert!((copula_cdf(&g2, &[0.5, 0.5]).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 0.375214).abs() < 1e-6);
        assert!(CopulaModel::gumbel(0.9).is_err());
    }

    #[test]
    fn grounded_and_uniform_margins() {
        let pseudo = PseudoObservations::new(array![[0.25, 0.5], [0.5, 1.0], [0.75, 0.25], [1.0, 0.75]]).unwrap();
        let models = [
            CopulaModel::Independent,
            CopulaModel::Gumbel { theta: 3.0 },
            CopulaModel::Empirical(pseudo),
        ];
        for model in &models {
            for v in [0.25, 0.5, 0.75, 1.0] {
                assert_eq!(copula_cdf(model, &[v, 1.0]).unwrap(), v, "{model:?}");
                assert_eq!(copula_cdf(model, &[1.0, v]).unwrap(), v, "{model:?}");
            }
            assert_eq!(copula_cdf(model, &[0.0, 0.7]).unwrap(), 0.0);
        }
        assert!(matches!(
            copula_cdf(&models[2], &[0.5]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            copula_cdf(&models[0], &[1.5, 0.5]),
            Err(Error::DomainError(_))
        ));
    }

    #[test]
    fn frechet_cases() {
        assert_eq!(frechet_bounds(&[0.5, 0.5]), (0.0, 0.5));
        assert_eq!(frechet_bounds(&[1.0, 1.0, 1.0]), (1.0, 1.0));
        let (w, m) = frechet_bounds(&[0.9, 0.9]);
        let pi = copula_cdf(&CopulaModel::Independent, &[0.9, 0.9]).unwrap();
        assert!((w - 0.8).abs() < 1e-15 && m == 0.9);
        assert!(w <= pi && pi <= m);
    }

    #[test]
    fn independent_levels() {
        assert_eq!(independent_epsilon_t(0.19, 2).unwrap(), 0.1);
        assert_eq!(independent_epsilon_t(0.3, 1).unwrap(), 0.3);
        let e = independent_epsilon_t(0.1, 4).unwrap();
        assert!((e - 0.025_996_253_574_703).abs() < 1e-12, "{e}");
        assert!(independent_epsilon_t(0.0, 2).is_err());
        assert!(independent_epsilon_t(1.0, 2).is_err());
    }

    #[test]
    fn gumbel_levels() {
        for &(eps, m) in &[(0.05, 2), (0.1, 3), (0.4, 7)] {
            assert_eq!(
                gumbel_epsilon_t(eps, m, 1.0).unwrap(),
                independent_epsilon_t(eps, m).unwrap()
            );
        }
        let e = gumbel_epsilon_t(0.1, 4, 2.0).unwrap();
        assert!((e - (1.0 - 0.9f64.sqrt())).abs() < 1e-15);
        assert!((e - 0.051_316_701_949_486).abs() < 1e-12);
        assert!((gumbel_epsilon_t(0.1, 5, 1e6).unwrap() - 0.1).abs() < 1e-4);
        assert!(gumbel_epsilon_t(0.1, 2, 0.5).is_err());
    }

    #[test]
    fn empirical_level_from_row_maxima() {
        let u = PseudoObservations::new(array![
            [0.2, 0.2],
            [0.4, 0.2],
            [0.6, 0.4],
            [0.8, 0.6],
            [0.4, 1.0]
        ])
        .unwrap();
        assert_eq!(u.row_maxima(), vec![0.2, 0.4, 0.6, 0.8, 1.0]);
        let e = empirical_epsilon_t(&u, 0.2).unwrap();
        assert_eq!(1.0 - e, 0.8);
        assert!((e - 0.2).abs() < 1e-15);
    }

    #[test]
    fn empirical_identical_rows() {
        let u = PseudoObservations::new(Array2::from_elem((6, 3), 1.0)).unwrap();
        let e = empirical_epsilon_t(&u, 0.5).unwrap();
        assert_eq!(e, 0.0);
        assert_eq!(copula_cdf(&CopulaModel::Empirical(u), &[1.0; 3]).unwrap(), 1.0);
    }

    #[test]
    fn single_target_thresholds_agree() {
        let a = ScoreMatrix::new(Array2::from_shape_fn((13, 1), |(i, _)| ((i * 7) % 13) as f64)).unwrap();
        for eps in [0.05, 0.1, 0.2, 0.5, 0.77] {
            let direct = EmpiricalCdf::new(a.column(0).iter().copied(), EcdfDivisor::N)
                .unwrap()
                .quantile(1.0 - eps)
                .unwrap();
            for kind in [CopulaKind::Independent, CopulaKind::Gumbel, CopulaKind::Empirical] {
                let (model, _) = fit_copula(kind, &a, GumbelEstimator::Tau, EcdfDivisor::N).unwrap();
                let cal = calibrate_thresholds(&a, &model, eps, EcdfDivisor::N).unwrap();
                assert_eq!(cal.thresholds, vec![direct], "{kind} at {eps}");
            }
        }
    }

    #[test]
    fn hand_matrix_thresholds() {
        // Columns hold ranks in different orders; with eps_g = 0.19 the
        // independent level is 0.9, i.e. the 9th of 10 sorted scores.
        let a = ScoreMatrix::new(Array2::from_shape_fn((10, 2), |(i, j)| {
            if j == 0 {
                (i + 1) as f64
            } else {
                (((i * 3) % 10) + 1) as f64 * 10.0
            }
        }))
        .unwrap();
        let cal = calibrate_thresholds(&a, &CopulaModel::Independent, 0.19, EcdfDivisor::N).unwrap();
        assert_eq!(cal.confidence.epsilon_t, 0.1);
        assert_eq!(cal.thresholds, vec![9.0, 90.0]);
        let g = calibrate_thresholds(&a, &CopulaModel::Gumbel { theta: 1.0 }, 0.19, EcdfDivisor::N).unwrap();
        assert_eq!(g, cal);
    }

    proptest! {
        #[test]
        fn empirical_search_matches_brute_force(
            n in 1usize..40,
            m in 1usize..5,
            seed in any::<u64>(),
            eps in 0.001f64..0.999,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let raw = Array2::from_shape_simple_fn((n, m), || rng.gen_range(0..6) as f64);
            let u = PseudoObservations::from_sample(raw.view(), EcdfDivisor::N).unwrap();
            let level = empirical_diagonal_level(&u, eps);
            prop_assert_eq!(level, brute_force_level(&u, eps));
            let c = copula_cdf(&CopulaModel::Empirical(u.clone()), &vec![level; m]).unwrap();
            prop_assert!(c >= 1.0 - eps);
        }

        #[test]
        fn gumbel_never_below_independent(eps in 0.001f64..0.999, m in 1usize..20, theta in 1.0f64..60.0) {
            prop_assert!(independent_epsilon_t(eps, m).unwrap() <= gumbel_epsilon_t(eps, m, theta).unwrap() + 1e-15);
        }
    }
}
