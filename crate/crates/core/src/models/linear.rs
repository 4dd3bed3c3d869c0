use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tikhonov term added to the centered Gram matrix.
pub const LEAST_SQUARES_DAMPING: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    #[serde(with = "super::bits::vec")]
    pub alpha: Vec<f64>,
    #[serde(with = "super::bits::scalar")]
    pub beta: f64,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.alpha.len() {
            return Err(Error::DimensionMismatch {
                expected: self.alpha.len(),
                got: x.len(),
            });
        }
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.alpha.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + self.beta
    }
}

/// Minimize mean squared error of `alpha . x + beta`.
///
/// Columns and targets are centered so the intercept is unpenalized; the
/// damped normal equations `(Xc'Xc + damping I) alpha = Xc'yc` are solved by
/// Cholesky factorization.
pub fn fit_least_squares(x: ArrayView2<f64>, y: &[f64]) -> Result<LinearModel> {
    fit_least_squares_damped(x, y, LEAST_SQUARES_DAMPING)
}

pub fn fit_least_squares_damped(x: ArrayView2<f64>, y: &[f64], damping: f64) -> Result<LinearModel> {
    let moments = CenteredMoments::new(x, y)?;
    let all: Vec<usize> = (0..moments.dim()).collect();
    moments.solve(&all, damping)
}

/// Column means and the centered cross products `Xc'Xc`, `Xc'yc`.
///
/// Centering is per column, so the moments of any column subset are the
/// corresponding sub-blocks; subset fits need no second pass over the rows.
#[derive(Debug, Clone)]
pub(crate) struct CenteredMoments {
    d: usize,
    x_mean: Vec<f64>,
    y_mean: f64,
    gram: Vec<f64>,
    rhs: Vec<f64>,
}

impl CenteredMoments {
    pub(crate) fn new(x: ArrayView2<f64>, y: &[f64]) -> Result<Self> {
        let (n, d) = x.dim();
        if n != y.len() {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: y.len(),
            });
        }
        if n == 0 {
            return Err(Error::TooFewRecords { needed: 1, got: 0 });
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("least squares input is not finite".into()));
        }
        let nf = n as f64;
        let x_mean: Vec<f64> = (0..d).map(|j| x.column(j).sum() / nf).collect();
        let y_mean = y.iter().sum::<f64>() / nf;

        let mut gram = vec![0.0; d * d];
        let mut rhs = vec![0.0; d];
        let mut centered = vec![0.0; d];
        for (row, &target) in x.rows().into_iter().zip(y) {
            for (c, (v, m)) in centered.iter_mut().zip(row.iter().zip(&x_mean)) {
                *c = v - m;
            }
            let yc = target - y_mean;
            for i in 0..d {
                let ci = centered[i];
                rhs[i] += ci * yc;
                for j in 0..=i {
                    gram[i * d + j] += ci * centered[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                gram[j * d + i] = gram[i * d + j];
            }
        }
        Ok(Self {
            d,
            x_mean,
            y_mean,
            gram,
            rhs,
        })
    }

    pub(crate) fn dim(&self) -> usize {
        self.d
    }

    /// Damped least squares on the given columns; `alpha` follows `columns`.
    pub(crate) fn solve(&self, columns: &[usize], damping: f64) -> Result<LinearModel> {
        let k = columns.len();
        let mut a = vec![0.0; k * k];
        for (i, &ci) in columns.iter().enumerate() {
            for (j, &cj) in columns.iter().enumerate() {
                a[i * k + j] = self.gram[ci * self.d + cj];
            }
            a[i * k + i] += damping;
        }
        let b: Vec<f64> = columns.iter().map(|&c| self.rhs[c]).collect();
        let alpha = cholesky_solve(&mut a, &b, k)?;
        let beta = self.y_mean - alpha.iter().zip(columns).map(|(a, &c)| a * self.x_mean[c]).sum::<f64>();
        Ok(LinearModel { alpha, beta })
    }
}

/// Solve `A z = b` for symmetric positive definite `A` (row-major, overwritten).
fn cholesky_solve(a: &mut [f64], b: &[f64], d: usize) -> Result<Vec<f64>> {
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= a[j * d + k] * a[j * d + k];
        }
        if !(diag > 0.0) {
            return Err(Error::Numeric(format!(
                "normal equations are not positive definite at column {j}"
            )));
        }
        let diag = diag.sqrt();
        a[j * d + j] = diag;
        for i in (j + 1)..d {
            let mut v = a[i * d + j];
            for k in 0..j {
                v -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = v / diag;
        }
    }
    // L w = b
    let mut w = b.to_vec();
    for i in 0..d {
        for k in 0..i {
            w[i] -= a[i * d + k] * w[k];
        }
        w[i] /= a[i * d + i];
    }
    // L' z = w
    for i in (0..d).rev() {
        for k in (i + 1)..d {
            w[i] -= a[k * d + i] * w[k];
        }
        w[i] /= a[i * d + i];
    }
    Ok(w)
}
