//! Offline baselines: debiasing with a single decorrelating matrix built from
//! all samples, and the ridge-type online recursion.

use nalgebra::{DMatrix, DVector};

use crate::debias_ts::{DebiasedEstimate, Method};
use crate::decorrelator::{solve_matrix, DecorrelatorConfig, DecorrelatorMatrix, Solver};
use crate::model::RegressionProblem;
use crate::{Error, Result};

/// θ^off = θ^L + (1/n)MXᵀ(y − Xθ^L), V_a = σ²(MΣ̂Mᵀ)_aa.
pub fn offline_debias(
    theta_lasso: &DVector<f64>,
    problem: &RegressionProblem,
    m: &DMatrix<f64>,
    sigma: f64,
) -> Result<DebiasedEstimate> {
    let (n, p0) = (problem.n(), problem.p0());
    if m.nrows() != p0 || m.ncols() != p0 || theta_lasso.len() != p0 {
        return Err(Error::Dimension(format!("offline debiasing needs a {p0}x{p0} matrix")));
    }
    let nf = n as f64;
    let x = &problem.x;
    let resid = problem.residual(theta_lasso);
    let mut theta = theta_lasso.clone();
    if resid.iter().any(|r| *r != 0.0) {
        theta += m * x.tr_mul(&resid) / nf;
    }
    let proj = x * m.transpose();
    let variance = DVector::from_fn(p0, |a, _| sigma * sigma * proj.column(a).norm_squared() / nf);
    let noise = problem.noise().map(|eps| m * x.tr_mul(&eps) / nf.sqrt());
    let acc = m * x.tr_mul(x) / nf;
    let bias_matrix_norm = (0..p0)
        .filter(|&a| m.row(a).iter().any(|v| *v != 0.0))
        .flat_map(|a| (0..p0).map(move |j| (a, j)))
        .map(|(a, j)| (nf.sqrt() * ((a == j) as u8 as f64 - acc[(a, j)])).abs())
        .fold(0.0, f64::max);
    Ok(DebiasedEstimate {
        theta,
        variance,
        noise,
        bias_matrix_norm,
        method: Method::Offline,
        n,
        sigma,
        covariance: None,
    })
}

/// μ = 2τ√(log p₀ / n).
pub fn offline_mu(p0: usize, n: usize, tau: f64) -> f64 {
    2.0 * tau * ((p0 as f64).ln() / n as f64).sqrt()
}

/// Rows of the sparse-precision offline decorrelator, solved with the ℓ1
/// budget removed.
pub fn build_offline_m(sigma_hat: &DMatrix<f64>, mu: f64, rows: &[usize]) -> Result<DecorrelatorMatrix> {
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument(format!("mu must be positive, got {mu}")));
    }
    let cfg = DecorrelatorConfig { mu, l1_bound: None, solver: Solver::Cd, ..DecorrelatorConfig::default() };
    solve_matrix(sigma_hat, rows, &cfg, None)
}

/// Ridge-type online recursion. For each sample in order,
/// `w_t = R_{t−1}x_t/(‖x_t‖² + λ)` and `R_t = R_{t−1} − w_t x_tᵀ`, with
/// `R_0 = I`; the estimate is `θ^L + Σ_t w_t (y_t − ⟨x_t, θ^L⟩)`. Rows of `R`
/// evolve independently, so only the listed coordinates are tracked; others
/// keep the LASSO value and zero variance.
pub fn ridge_online_baseline(
    theta_lasso: &DVector<f64>,
    problem: &RegressionProblem,
    lambda: f64,
    rows: &[usize],
    sigma: f64,
) -> Result<DebiasedEstimate> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("ridge penalty must be positive, got {lambda}")));
    }
    let (n, p0) = (problem.n(), problem.p0());
    if theta_lasso.len() != p0 {
        return Err(Error::Dimension("estimate length does not match design".into()));
    }
    if let Some(&a) = rows.iter().find(|&&a| a >= p0) {
        return Err(Error::Dimension(format!("row {a} out of range for p0 = {p0}")));
    }
    let k = rows.len();
    let resid = problem.residual(theta_lasso);
    let eps = problem.noise();
    // r.row(i) tracks row rows[i] of R
    let mut r = DMatrix::zeros(k, p0);
    for (i, &a) in rows.iter().enumerate() {
        r[(i, a)] = 1.0;
    }
    let mut correction = DVector::zeros(k);
    let mut noise = DVector::zeros(k);
    let mut w_sq = DVector::zeros(k);
    for t in 0..n {
        let x = problem.x.row(t).transpose();
        let w = &r * &x / (x.norm_squared() + lambda);
        correction.axpy(resid[t], &w, 1.0);
        if let Some(e) = &eps {
            noise.axpy(e[t], &w, 1.0);
        }
        w_sq += w.component_mul(&w);
        r -= &w * x.transpose();
    }
    let nf = n as f64;
    let mut theta = theta_lasso.clone();
    let mut variance = DVector::zeros(p0);
    let mut full_noise = DVector::zeros(p0);
    for (i, &a) in rows.iter().enumerate() {
        if resid.iter().any(|v| *v != 0.0) {
            theta[a] += correction[i];
        }
        // Var(Σ w_t ε_t) = σ² Σ w_t²; rescaled to the √n convention
        variance[a] = nf * sigma * sigma * w_sq[i];
        full_noise[a] = nf.sqrt() * noise[i];
    }
    Ok(DebiasedEstimate {
        theta,
        variance,
        noise: eps.map(|_| full_noise),
        bias_matrix_norm: nf.sqrt() * r.amax(),
        method: Method::RidgeOnline,
        n,
        sigma,
        covariance: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gram_rows, spd_inverse};
    use crate::model::Origin;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn problem(n: usize, p: usize, seed: u64) -> RegressionProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        RegressionProblem::new(x, y, Origin::Generic).unwrap()
    }

    #[test]
    fn inverse_decorrelator_gives_ols() {
        let prob = problem(25, 4, 1);
        let inv = spd_inverse(&gram_rows(&prob.x, 0..25)).unwrap();
        let theta_l = DVector::from_vec(vec![0.3, 0.0, -0.2, 0.0]);
        let est = offline_debias(&theta_l, &prob, &inv, 1.0).unwrap();
        let ols = prob.x.clone().svd(true, true).solve(&prob.y, 1e-14).unwrap();
        assert!((est.theta - ols).amax() < 1e-8);
        assert!(est.bias_matrix_norm < 1e-10);
    }

    #[test]
    fn zero_residual_is_identity() {
        let mut prob = problem(10, 3, 2);
        let theta = DVector::from_vec(vec![0.1, 0.2, 0.3]);
        prob.y = &prob.x * &theta;
        let est = offline_debias(&theta, &prob, &DMatrix::identity(3, 3), 1.0).unwrap();
        assert_eq!(est.theta, theta);
    }

    #[test]
    fn offline_m_examples() {
        let id = DMatrix::identity(3, 3);
        let m = build_offline_m(&id, 0.2, &[0, 1, 2]).unwrap();
        assert!((&m.m - &id * 0.8).amax() < 1e-12);
        assert!(build_offline_m(&id, 1.0, &[0, 1, 2]).unwrap().m.iter().all(|v| *v == 0.0));
        assert!((offline_mu(100, 100, 0.5) - (100f64.ln() / 100.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ridge_first_step() {
        let x = DMatrix::from_row_slice(1, 2, &[2.0, 0.0]);
        let prob = RegressionProblem::new(x, DVector::from_vec(vec![1.0]), Origin::Generic).unwrap();
        let est = ridge_online_baseline(&DVector::zeros(2), &prob, 1.0, &[0, 1], 1.0).unwrap();
        // w₁ = (0.4, 0), correction w₁·y₁
        assert!((est.theta[0] - 0.4).abs() < 1e-15);
        assert_eq!(est.theta[1], 0.0);
        assert!((est.variance[0] - 0.16).abs() < 1e-15);
    }

    #[test]
    fn ridge_zero_sample_contributes_nothing() {
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        let prob = RegressionProblem::new(x, DVector::from_vec(vec![5.0, 0.0]), Origin::Generic).unwrap();
        let est = ridge_online_baseline(&DVector::zeros(2), &prob, 1.0, &[0, 1], 1.0).unwrap();
        assert_eq!(est.theta, DVector::zeros(2));
    }

    #[test]
    fn ridge_rows_match_full_recursion() {
        let prob = problem(30, 5, 3);
        let theta_l = DVector::from_element(5, 0.1);
        let full = ridge_online_baseline(&theta_l, &prob, 0.5, &[0, 1, 2, 3, 4], 1.0).unwrap();
        let part = ridge_online_baseline(&theta_l, &prob, 0.5, &[3], 1.0).unwrap();
        assert_eq!(full.theta[3], part.theta[3]);
        assert_eq!(part.theta[0], theta_l[0]);
    }

    #[test]
    fn ridge_weights_ignore_responses() {
        let prob = problem(20, 3, 4);
        let mut other = prob.clone();
        other.y *= -2.0;
        let a = ridge_online_baseline(&DVector::zeros(3), &prob, 1.0, &[0, 1, 2], 1.0).unwrap();
        let b = ridge_online_baseline(&DVector::zeros(3), &other, 1.0, &[0, 1, 2], 1.0).unwrap();
        assert_eq!(a.variance, b.variance);
        assert_eq!(a.bias_matrix_norm, b.bias_matrix_norm);
    }
}
