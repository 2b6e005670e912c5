//! Cyclic coordinate-descent LASSO and a plug-in noise-level estimate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::decorrelator::soft_threshold;
use crate::model::RegressionProblem;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoConfig {
    /// Penalty λ_n. Non-positive means "derive from `lambda0`".
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub lambda0: f64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self { lambda: 0.0, tol: 1e-8, max_iter: 10_000, lambda0: 1.0 }
    }
}

impl LassoConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self { lambda, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub theta: DVector<f64>,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// λ₀·σ·√(log p₀ / n).
pub fn default_lambda(n: usize, p0: usize, sigma: f64, lambda0: f64) -> f64 {
    lambda0 * sigma * ((p0 as f64).ln() / n as f64).sqrt()
}

/// (1/2n)‖y − Xθ‖² + λ‖θ‖₁.
pub fn lasso_objective(x: &DMatrix<f64>, y: &DVector<f64>, theta: &DVector<f64>, lambda: f64) -> f64 {
    let r = y - x * theta;
    r.norm_squared() / (2.0 * x.nrows() as f64) + lambda * theta.lp_norm(1)
}

/// Minimizes (1/2n)‖y − Xθ‖² + λ‖θ‖₁ by cyclic coordinate descent.
/// Non-convergence is reported through [`LassoFit::converged`].
pub fn fit_lasso(problem: &RegressionProblem, config: &LassoConfig) -> Result<LassoFit> {
    fit_lasso_xy(&problem.x, &problem.y, config)
}

pub fn fit_lasso_xy(x: &DMatrix<f64>, y: &DVector<f64>, config: &LassoConfig) -> Result<LassoFit> {
    let (n, p) = (x.nrows(), x.ncols());
    if n != y.len() {
        return Err(Error::Dimension(format!("design has {n} rows, response {}", y.len())));
    }
    if !(config.lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {}", config.lambda)));
    }
    if !(config.tol > 0.0) || config.max_iter == 0 {
        return Err(Error::InvalidArgument("tol must be positive and max_iter at least 1".into()));
    }
    let lambda = config.lambda;
    let nf = n as f64;
    let col_sq: Vec<f64> = x.column_iter().map(|c| c.norm_squared() / nf).collect();
    let mut theta = DVector::zeros(p);
    let mut iterations = 0;
    let mut converged = false;

    if n > p {
        // covariance form: gradient pieces from XᵀX/n and Xᵀy/n
        let gram = x.tr_mul(x) / nf;
        let xty = x.tr_mul(y) / nf;
        // g = Xᵀy/n − (XᵀX/n)θ kept up to date
        let mut g = xty.clone();
        while iterations < config.max_iter {
            iterations += 1;
            let mut max_change = 0.0_f64;
            for j in 0..p {
                if col_sq[j] == 0.0 {
                    continue;
                }
                let old = theta[j];
                let z = g[j] + col_sq[j] * old;
                let new = soft_threshold(z, lambda) / col_sq[j];
                let delta = new - old;
                if delta != 0.0 {
                    theta[j] = new;
                    g.axpy(-delta, &gram.column(j), 1.0);
                    max_change = max_change.max(delta.abs());
                }
            }
            if max_change < config.tol {
                converged = true;
                break;
            }
        }
    } else {
        let mut r = y.clone();
        while iterations < config.max_iter {
            iterations += 1;
            let mut max_change = 0.0_f64;
            for j in 0..p {
                if col_sq[j] == 0.0 {
                    continue;
                }
                let col = x.column(j);
                let old = theta[j];
                let z = col.dot(&r) / nf + col_sq[j] * old;
                let new = soft_threshold(z, lambda) / col_sq[j];
                let delta = new - old;
                if delta != 0.0 {
                    theta[j] = new;
                    r.axpy(-delta, &col, 1.0);
                    max_change = max_change.max(delta.abs());
                }
            }
            if max_change < config.tol {
                converged = true;
                break;
            }
        }
    }
    Ok(LassoFit { theta, lambda, iterations, converged })
}

/// Largest violation of the LASSO subgradient conditions at θ.
pub fn lasso_kkt_violation(x: &DMatrix<f64>, y: &DVector<f64>, theta: &DVector<f64>, lambda: f64) -> f64 {
    let g = x.tr_mul(&(y - x * theta)) / x.nrows() as f64;
    g.iter()
        .zip(theta.iter())
        .map(|(&gj, &tj)| {
            if tj == 0.0 {
                (gj.abs() - lambda).max(0.0)
            } else {
                (gj - lambda * tj.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// √(‖y − Xθ‖² / (n − ‖θ‖₀)).
pub fn estimate_sigma(problem: &RegressionProblem, theta: &DVector<f64>) -> Result<f64> {
    let n = problem.n();
    let support = theta.iter().filter(|v| **v != 0.0).count();
    if n <= support {
        return Err(Error::DegreesOfFreedom(format!("n = {n} does not exceed support size {support}")));
    }
    Ok((problem.residual(theta).norm_squared() / (n - support) as f64).sqrt())
}
