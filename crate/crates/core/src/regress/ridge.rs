use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::Regressor;
use crate::{Error, Result};

/// Multi-output ridge regression with an unpenalized intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    /// `d x m` coefficients.
    coefficients: Array2<f64>,
    /// Length-`m` intercept.
    intercept: Array1<f64>,
}

impl RidgeModel {
    pub fn from_parts(coefficients: Array2<f64>, intercept: Array1<f64>) -> Result<Self> {
        if coefficients.ncols() != intercept.len() {
            return Err(Error::DimensionMismatch {
                context: "ridge intercept",
                expected: coefficients.ncols(),
                got: intercept.len(),
            });
        }
        Ok(Self {
            coefficients,
            intercept,
        })
    }

    /// Solves `(Xc' Xc + l2 I) W = Xc' Yc` on centered data.
    pub fn fit(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, l2: f64) -> Result<Self> {
        let n = x.nrows() as f64;
        let x_mean = x.sum_axis(Axis(0)) / n;
        let y_mean = y.sum_axis(Axis(0)) / n;
        let xc = &x - &x_mean;
        let yc = &y - &y_mean;

        let mut gram = xc.t().dot(&xc);
        for i in 0..gram.nrows() {
            gram[[i, i]] += l2;
        }
        let rhs = xc.t().dot(&yc);
        let coefficients = cholesky_solve(&gram, &rhs)?;
        let intercept = &y_mean - &x_mean.dot(&coefficients);
        Ok(Self {
            coefficients,
            intercept,
        })
    }

    pub fn coefficients(&self) -> ArrayView2<'_, f64> {
        self.coefficients.view()
    }

    pub fn intercept(&self) -> &Array1<f64> {
        &self.intercept
    }
}

impl Regressor for RidgeModel {
    fn input_dim(&self) -> usize {
        self.coefficients.nrows()
    }

    fn output_dim(&self) -> usize {
        self.coefficients.ncols()
    }

    fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        super::check_input(self, x)?;
        Ok(x.dot(&self.coefficients) + &self.intercept)
    }
}

/// Solves `a X = b` for symmetric positive definite `a`.
fn cholesky_solve(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    let scale = a.diag().iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 1e-13 * scale {
                    return Err(Error::SingularSystem);
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }

    let mut x = b.clone();
    for mut col in x.columns_mut() {
        // forward: L z = b
        for i in 0..n {
            let mut s = col[i];
            for k in 0..i {
                s -= l[[i, k]] * col[k];
            }
            col[i] = s / l[[i, i]];
        }
        // backward: L' x = z
        for i in (0..n).rev() {
            let mut s = col[i];
            for k in i + 1..n {
                s -= l[[k, i]] * col[k];
            }
            col[i] = s / l[[i, i]];
        }
    }
    Ok(x)
}
