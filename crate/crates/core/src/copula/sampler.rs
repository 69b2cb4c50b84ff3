//! Gumbel copula sampling (Marshall-Olkin construction).
//!
//! Used to generate data with known dependence for estimator checks; the
//! calibration path never samples.

use ndarray::Array2;
use rand::Rng;
use rand_distr::Exp1;

use crate::{Error, Result};

/// Positive stable variate with Laplace transform `exp(-s^alpha)`,
/// `0 < alpha <= 1` (Kanter's representation).
pub fn positive_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    if alpha >= 1.0 {
        return 1.0;
    }
    let angle = std::f64::consts::PI * rng.gen_range(f64::EPSILON..1.0);
    let w: f64 = rng.sample(Exp1);
    let a = (alpha * angle).sin() / angle.sin().powf(1.0 / alpha);
    let b = (((1.0 - alpha) * angle).sin() / w).powf((1.0 - alpha) / alpha);
    a * b
}

/// Draws `n` rows from the `m`-variate Gumbel copula with parameter `theta`:
/// `U_j = exp(-(E_j / V)^(1/theta))` with `V` positive stable of index
/// `1/theta` and `E_j` unit exponentials.
pub fn sample_gumbel<R: Rng + ?Sized>(theta: f64, n: usize, m: usize, rng: &mut R) -> Result<Array2<f64>> {
    if !(theta >= 1.0 && theta.is_finite()) {
        return Err(Error::DomainError(format!("Gumbel theta must be >= 1, got {theta}")));
    }
    let alpha = 1.0 / theta;
    let mut out = Array2::zeros((n, m));
    for mut row in out.rows_mut() {
        let v = positive_stable(alpha, rng);
        for x in row.iter_mut() {
            let e: f64 = rng.sample(Exp1);
            *x = (-(e / v).powf(alpha)).exp();
        }
    }
    Ok(out)
}
