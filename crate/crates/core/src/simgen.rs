//! Seeded data generators and closed-form moment oracles.
//!
//! Randomness comes from ChaCha8 streams: [`replicate_rng`] maps
//! `(seed, replicate)` to an independent stream, so Monte Carlo output does
//! not depend on execution order.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::debias_batch::BatchDesign;
use crate::lasso::{fit_lasso_xy, LassoConfig};
use crate::linalg::{spd_inverse, sym_eigen_extremes};
use crate::model::{char_poly_embedding, RegressionProblem, VarModel};
use crate::normal;
use crate::{Error, Result};

pub const DEFAULT_BURN_IN: usize = 200;
pub const DEFAULT_QUADRATURE: usize = 4096;

/// Independent stream `replicate` of the generator seeded with `seed`.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CovKind {
    /// ρ^|i−j|
    #[default]
    Power,
    /// 1 on the diagonal, ρ elsewhere.
    Equi,
}

pub fn build_sigma_zeta(p: usize, rho: f64, kind: CovKind) -> Result<DMatrix<f64>> {
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidArgument(format!("|rho| must be below 1, got {rho}")));
    }
    Ok(DMatrix::from_fn(p, p, |i, j| match kind {
        _ if i == j => 1.0,
        CovKind::Power => rho.powi(i.abs_diff(j) as i32),
        CovKind::Equi => rho,
    }))
}

/// `diag` on the diagonal, `off` on the first off-diagonals.
pub fn tridiagonal(p: usize, diag: f64, off: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| match i.abs_diff(j) {
        0 => diag,
        1 => off,
        _ => 0.0,
    })
}

/// Coefficient matrices with entries `b·Bern(q)·Unif{±1} + N(0, noise_sd²)`
/// and the matching spike masks.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientDraw {
    pub coeffs: Vec<DMatrix<f64>>,
    pub spikes: Vec<DMatrix<bool>>,
}

pub fn gen_coefficients<R: Rng + ?Sized>(
    p: usize,
    d: usize,
    q: f64,
    b: f64,
    noise_sd: f64,
    rng: &mut R,
) -> Result<CoefficientDraw> {
    let bern = Bernoulli::new(q).map_err(|_| Error::InvalidArgument(format!("q must lie in [0, 1], got {q}")))?;
    if !(noise_sd >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise sd must be non-negative, got {noise_sd}")));
    }
    let mut coeffs = Vec::with_capacity(d);
    let mut spikes = Vec::with_capacity(d);
    for _ in 0..d {
        let mut a = DMatrix::zeros(p, p);
        let mut mask = DMatrix::from_element(p, p, false);
        for j in 0..p {
            for i in 0..p {
                let spike = bern.sample(rng);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let g: f64 = rng.sample(StandardNormal);
                a[(i, j)] = if spike { b * sign } else { 0.0 } + noise_sd * g;
                mask[(i, j)] = spike;
            }
        }
        coeffs.push(a);
        spikes.push(mask);
    }
    Ok(CoefficientDraw { coeffs, spikes })
}

/// Redraws coefficients until the companion matrix has spectral radius below
/// one. Returns the draw and the number of rejected draws.
pub fn gen_stationary_coefficients<R: Rng + ?Sized>(
    p: usize,
    d: usize,
    q: f64,
    b: f64,
    noise_sd: f64,
    noise_cov: &DMatrix<f64>,
    max_draws: usize,
    rng: &mut R,
) -> Result<(VarModel, CoefficientDraw, usize)> {
    for rejected in 0..max_draws {
        let draw = gen_coefficients(p, d, q, b, noise_sd, rng)?;
        let model = VarModel::new(draw.coeffs.clone(), noise_cov.clone())?;
        if model.is_stationary() {
            return Ok((model, draw, rejected));
        }
    }
    Err(Error::Unstable(format!("no stationary coefficient draw in {max_draws} attempts")))
}

fn cholesky_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::NotPositiveDefinite("covariance has no Cholesky factor".into()))
}

fn std_normal_vec<R: Rng + ?Sized>(p: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(p, |_, _| rng.sample(StandardNormal))
}

/// `T` observations of the process started from zero after discarding
/// `burn_in` samples. Non-stationary models are rejected unless `force`.
pub fn gen_var_series<R: Rng + ?Sized>(
    model: &VarModel,
    t: usize,
    burn_in: usize,
    force: bool,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    if !force && !model.is_stationary() {
        return Err(Error::Unstable(format!("companion spectral radius {:.4} ≥ 1", model.spectral_radius())));
    }
    let (p, d) = (model.p(), model.d());
    let chol = cholesky_factor(model.noise_cov())?;
    // history[0] is the most recent state
    let mut history: Vec<DVector<f64>> = vec![DVector::zeros(p); d];
    let mut out = Vec::with_capacity(t);
    for step in 0..burn_in + t {
        let mut z = &chol * std_normal_vec(p, rng);
        for (a, past) in model.coeffs().iter().zip(&history) {
            z.gemv(1.0, a, past, 1.0);
        }
        history.pop();
        history.insert(0, z.clone());
        if step >= burn_in {
            out.push(z);
        }
    }
    Ok(out)
}

/// Autocovariances Γ_z(h) = E[z_{t+h} z_tᵀ] for h = 0..=max_lag, by the
/// periodic trapezoid rule on the spectral density.
pub fn stationary_covariances(model: &VarModel, max_lag: usize, grid_size: usize) -> Result<Vec<DMatrix<f64>>> {
    if grid_size < 2 {
        return Err(Error::InvalidArgument("quadrature needs at least two nodes".into()));
    }
    let p = model.p();
    let mut noise = DMatrix::zeros(2 * p, 2 * p);
    noise.view_mut((0, 0), (p, p)).copy_from(model.noise_cov());
    noise.view_mut((p, p), (p, p)).copy_from(model.noise_cov());
    let mut out = vec![DMatrix::zeros(p, p); max_lag + 1];
    for k in 0..grid_size {
        let theta = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * k as f64 / grid_size as f64;
        // real embedding of 𝒜(e^{−jθ}) and its inverse
        let e = char_poly_embedding(model.coeffs(), -theta);
        let inv = e
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Unstable(format!("characteristic polynomial singular at θ = {theta}")))?;
        let dens = &inv * &noise * inv.transpose();
        let re = dens.view((0, 0), (p, p));
        let im = dens.view((p, 0), (p, p));
        for (h, acc) in out.iter_mut().enumerate() {
            let (s, c) = (h as f64 * theta).sin_cos();
            *acc += re * c - im * s;
        }
    }
    for acc in &mut out {
        *acc /= grid_size as f64;
    }
    Ok(out)
}

/// Γ_z(ℓ) for any integer lag, using Γ_z(−ℓ) = Γ_z(ℓ)ᵀ.
pub fn stationary_covariance(model: &VarModel, ell: i64, grid_size: usize) -> Result<DMatrix<f64>> {
    let lags = stationary_covariances(model, ell.unsigned_abs() as usize, grid_size)?;
    let g = lags.last().expect("at least lag zero").clone();
    Ok(if ell < 0 { g.transpose() } else { g })
}

/// Population covariance of a regression row `(z_{t+d−1}, …, z_t)`:
/// block (r, s) is Γ_z(s − r).
pub fn design_covariance(model: &VarModel, grid_size: usize) -> Result<DMatrix<f64>> {
    let (p, d) = (model.p(), model.d());
    let lags = stationary_covariances(model, d - 1, grid_size)?;
    let mut sigma = DMatrix::zeros(d * p, d * p);
    for r in 0..d {
        for s in 0..d {
            let block = if s >= r { lags[s - r].clone() } else { lags[r - s].transpose() };
            sigma.view_mut((r * p, s * p), (p, p)).copy_from(&block);
        }
    }
    Ok(sigma)
}

/// Moments of `x ~ N(0, Σ)` conditioned on `⟨x, θ⟩ ≥ ς̄·⟨θ, Σθ⟩^{1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMoments {
    pub mean_xi1: f64,
    pub second_moment_xi1: f64,
    pub sigma2: DMatrix<f64>,
    pub omega2: DMatrix<f64>,
}

fn quad_form(sigma: &DMatrix<f64>, theta: &DVector<f64>) -> Result<f64> {
    let s = theta.dot(&(sigma * theta));
    if !(s > 0.0) {
        return Err(Error::InvalidArgument("direction θ must be non-zero".into()));
    }
    Ok(s)
}

pub fn conditional_moments(sigma: &DMatrix<f64>, theta: &DVector<f64>, varsigma_bar: f64) -> Result<ConditionalMoments> {
    let s2 = quad_form(sigma, theta)?;
    let omega = spd_inverse(sigma)?;
    let tail = normal::sf(varsigma_bar);
    let dens = normal::pdf(varsigma_bar);
    let mean_xi1 = dens / tail;
    let excess = varsigma_bar * dens / tail;
    let st = sigma * theta;
    let sigma2 = sigma + &st * st.transpose() * (excess / s2);
    let omega2 = &omega - theta * theta.transpose() * (varsigma_bar * dens / (tail + varsigma_bar * dens) / s2);
    Ok(ConditionalMoments { mean_xi1, second_moment_xi1: 1.0 + excess, sigma2, omega2 })
}

/// (w·Σ + (1 − w)·Σ^(2))⁻¹ in closed form.
pub fn mixture_precision(sigma: &DMatrix<f64>, theta: &DVector<f64>, varsigma_bar: f64, weight: f64) -> Result<DMatrix<f64>> {
    let s2 = quad_form(sigma, theta)?;
    let omega = spd_inverse(sigma)?;
    let excess = varsigma_bar * normal::pdf(varsigma_bar) / normal::sf(varsigma_bar);
    let c = (1.0 - weight) * excess;
    Ok(&omega - theta * theta.transpose() * (c / (1.0 + c) / s2))
}

/// Draw from the standard normal truncated to `[lower, ∞)` by inverse CDF.
pub fn truncated_normal<R: Rng + ?Sized>(lower: f64, rng: &mut R) -> f64 {
    let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
    let tail = normal::sf(lower);
    if tail > 0.0 {
        let x = -normal::quantile(u * tail);
        if x.is_finite() {
            return x.max(lower);
        }
    }
    // far tail: the overshoot is close to exponential with rate `lower`
    lower - u.ln() / lower
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Intermediate {
    /// Debiased LASSO on batch 1 with the population precision Σ⁻¹;
    /// λ = scale·λmax(Σ)·σ·√(log p / n1).
    DebiasedLasso { lambda_scale: f64 },
    /// Ridge (1/n1)‖y − Xθ‖² + λ‖θ‖² on batch 1.
    Ridge { lambda: f64 },
}

impl Default for Intermediate {
    fn default() -> Self {
        Intermediate::DebiasedLasso { lambda_scale: 2.5 }
    }
}

/// Intermediate estimate θ̂¹ from batch 1.
pub fn intermediate_estimate(
    x1: &DMatrix<f64>,
    y1: &DVector<f64>,
    sigma_x: &DMatrix<f64>,
    noise_sd: f64,
    intermediate: Intermediate,
) -> Result<DVector<f64>> {
    let (n1, p) = (x1.nrows(), x1.ncols());
    match intermediate {
        Intermediate::DebiasedLasso { lambda_scale } => {
            let (_, lmax) = sym_eigen_extremes(sigma_x);
            let lambda = lambda_scale * lmax * noise_sd.max(f64::MIN_POSITIVE) * ((p as f64).ln() / n1 as f64).sqrt();
            let fit = fit_lasso_xy(x1, y1, &LassoConfig::with_lambda(lambda))?;
            let omega = spd_inverse(sigma_x)?;
            let resid = y1 - x1 * &fit.theta;
            Ok(&fit.theta + omega * x1.tr_mul(&resid) / n1 as f64)
        }
        Intermediate::Ridge { lambda } => {
            if !(lambda > 0.0) {
                return Err(Error::InvalidArgument(format!("ridge penalty must be positive, got {lambda}")));
            }
            let gram = x1.tr_mul(x1) / n1 as f64 + DMatrix::identity(p, p) * lambda;
            let rhs = x1.tr_mul(y1) / n1 as f64;
            gram.cholesky()
                .map(|c| c.solve(&rhs))
                .ok_or_else(|| Error::NotPositiveDefinite("ridge system".into()))
        }
    }
}

/// Rows from `N(0, Σ)` conditioned on `⟨x, θ⟩ ≥ ς̄·⟨θ, Σθ⟩^{1/2}`. The
/// component along Σθ is replaced by a truncated normal draw; the
/// orthogonal remainder keeps its conditional law. `ς̄ = −∞` or `θ = 0`
/// gives unconditional rows.
pub fn gen_conditional_rows<R: Rng + ?Sized>(
    sigma_x: &DMatrix<f64>,
    theta: &DVector<f64>,
    varsigma_bar: f64,
    n: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let p = sigma_x.nrows();
    let chol = cholesky_factor(sigma_x)?;
    let st = sigma_x * theta;
    let s2 = theta.dot(&st);
    let conditional = varsigma_bar.is_finite() && s2 > 0.0;
    let s = s2.sqrt();
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let mut row = &chol * std_normal_vec(p, rng);
        if conditional {
            let w = row.dot(theta) / s;
            let xi1 = truncated_normal(varsigma_bar, rng);
            row.axpy((xi1 - w) / s, &st, 1.0);
        }
        x.set_row(i, &row.transpose());
    }
    Ok(x)
}

/// Two-batch adaptive dataset: batch 1 i.i.d. `N(0, Σ)`, an intermediate
/// estimate from batch 1, and batch 2 sampled conditionally on it.
pub fn gen_batch_data<R: Rng + ?Sized>(
    theta0: &DVector<f64>,
    sigma_x: &DMatrix<f64>,
    n1: usize,
    n2: usize,
    varsigma_bar: f64,
    intermediate: Intermediate,
    noise_sd: f64,
    rng: &mut R,
) -> Result<(BatchDesign, RegressionProblem)> {
    let p = sigma_x.nrows();
    if theta0.len() != p {
        return Err(Error::Dimension(format!("theta0 has length {}, covariance is {p}x{p}", theta0.len())));
    }
    let noise = Normal::new(0.0, noise_sd).map_err(|_| Error::InvalidArgument(format!("bad noise sd {noise_sd}")))?;
    let x1 = gen_conditional_rows(sigma_x, &DVector::zeros(p), f64::NEG_INFINITY, n1, rng)?;
    let y1 = &x1 * theta0 + DVector::from_fn(n1, |_, _| noise.sample(rng));
    let theta_int = intermediate_estimate(&x1, &y1, sigma_x, noise_sd, intermediate)?;
    let x2 = gen_conditional_rows(sigma_x, &theta_int, varsigma_bar, n2, rng)?;
    let y2 = &x2 * theta0 + DVector::from_fn(n2, |_, _| noise.sample(rng));
    let design = BatchDesign::new(x1, y1, x2, y2, theta_int, varsigma_bar)?;
    let problem = design.stacked()?.with_truth(theta0.clone(), noise_sd)?;
    Ok((design, problem))
}
