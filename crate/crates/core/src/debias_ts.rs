//! Episodic online debiasing for VAR(d) regressions.
//!
//! The samples are split into episodes `E_0, …, E_{K−1}`. For every episode
//! ℓ ≥ 1 a decorrelating matrix `M^(ℓ)` is fitted to the sample covariance of
//! the rows in earlier episodes only, and the estimate is
//!
//! ```text
//! θ^on = θ^L + (1/n) Σ_{ℓ≥1} Σ_{t∈E_ℓ} M^(ℓ) x_t (y_t − ⟨x_t, θ^L⟩)
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::decorrelator::{solve_matrix, AdaptiveConfig, DecorrelatorMatrix};
use crate::model::{EpisodeSchedule, RegressionProblem};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    OnlineTs,
    OnlineBatch,
    Offline,
    OfflineSparse,
    RidgeOnline,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::OnlineTs => "online-ts",
            Method::OnlineBatch => "online-batch",
            Method::Offline => "offline",
            Method::OfflineSparse => "offline-sparse",
            Method::RidgeOnline => "ridge-online",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A debiased point estimate with its studentization.
///
/// `variance[a]` is on the √n scale: the interval half-width for coordinate
/// `a` is `z·√(variance[a]/n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasedEstimate {
    pub theta: DVector<f64>,
    pub variance: DVector<f64>,
    /// Noise component W_n, available when the true parameter is known.
    pub noise: Option<DVector<f64>>,
    /// Largest absolute entry of the bias matrix B_n over the debiased rows.
    pub bias_matrix_norm: f64,
    pub method: Method,
    pub n: usize,
    pub sigma: f64,
    /// Full conditional covariance V_n, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<DMatrix<f64>>,
}

impl DebiasedEstimate {
    pub fn p0(&self) -> usize {
        self.theta.len()
    }
}

fn check_schedule(x: &DMatrix<f64>, schedule: &EpisodeSchedule) -> Result<()> {
    if schedule.n() != x.nrows() {
        return Err(Error::Schedule(format!(
            "schedule covers {} samples but the design has {} rows",
            schedule.n(),
            x.nrows()
        )));
    }
    Ok(())
}

/// Predictable decorrelator sequence `M^(1), …, M^(K−1)`. `M^(ℓ)` reads only
/// the first `n_ℓ` rows of `x` and is warm-started from `M^(ℓ−1)`. Only the
/// listed `rows` are solved.
pub fn build_m_sequence(
    x: &DMatrix<f64>,
    schedule: &EpisodeSchedule,
    config: &AdaptiveConfig,
    rows: &[usize],
) -> Result<Vec<DecorrelatorMatrix>> {
    check_schedule(x, schedule)?;
    let p0 = x.ncols();
    if let Some(&a) = rows.iter().find(|&&a| a >= p0) {
        return Err(Error::Dimension(format!("row {a} out of range for p0 = {p0}")));
    }
    let mut gram = DMatrix::zeros(p0, p0);
    let mut seq: Vec<DecorrelatorMatrix> = Vec::with_capacity(schedule.k().saturating_sub(1));
    for ell in 1..schedule.k() {
        let prev = schedule.episode(ell - 1);
        let block = x.rows(prev.start, prev.len());
        gram += block.transpose() * block;
        let n_ell = schedule.prefix_len(ell);
        let sigma_hat = &gram / n_ell as f64;
        let cfg = config.resolve(&sigma_hat, n_ell)?;
        let warm = seq.last().map(|m| &m.m);
        seq.push(solve_matrix(&sigma_hat, rows, &cfg, warm)?);
    }
    Ok(seq)
}

/// The parts of the online estimator that depend on the design only, so that
/// one decorrelator sequence serves every response coordinate.
#[derive(Debug, Clone)]
pub struct OnlineTsDebiaser {
    schedule: EpisodeSchedule,
    m_seq: Vec<DecorrelatorMatrix>,
    /// V_{n,a}/σ².
    unit_variance: DVector<f64>,
    bias_norm: f64,
}

impl OnlineTsDebiaser {
    pub fn new(x: &DMatrix<f64>, schedule: EpisodeSchedule, m_seq: Vec<DecorrelatorMatrix>) -> Result<Self> {
        check_schedule(x, &schedule)?;
        if m_seq.len() + 1 != schedule.k() {
            return Err(Error::Dimension(format!(
                "{} decorrelators for a schedule of {} episodes",
                m_seq.len(),
                schedule.k()
            )));
        }
        let p0 = x.ncols();
        if m_seq.iter().any(|m| m.p0() != p0) {
            return Err(Error::Dimension("decorrelator width does not match the design".into()));
        }
        let n = x.nrows() as f64;
        let unit_variance = conditional_variance_unit(&m_seq, x, &schedule);
        let mut acc = DMatrix::<f64>::zeros(p0, p0);
        for (ell, m) in m_seq.iter().enumerate().map(|(k, m)| (k + 1, m)) {
            let e = schedule.episode(ell);
            let block = x.rows(e.start, e.len());
            acc += &m.m * (block.transpose() * block);
        }
        let rows = m_seq.first().map(|m| m.rows.clone()).unwrap_or_default();
        let bias_norm = rows
            .iter()
            .flat_map(|&a| (0..p0).map(move |j| (a, j)))
            .map(|(a, j)| {
                let id = if a == j { 1.0 } else { 0.0 };
                (n.sqrt() * (id - acc[(a, j)] / n)).abs()
            })
            .fold(0.0, f64::max);
        Ok(Self { schedule, m_seq, unit_variance, bias_norm })
    }

    /// Builds the decorrelator sequence and the design-only quantities.
    pub fn fit(x: &DMatrix<f64>, schedule: EpisodeSchedule, config: &AdaptiveConfig, rows: &[usize]) -> Result<Self> {
        let m_seq = build_m_sequence(x, &schedule, config, rows)?;
        Self::new(x, schedule, m_seq)
    }

    pub fn schedule(&self) -> &EpisodeSchedule {
        &self.schedule
    }

    pub fn m_sequence(&self) -> &[DecorrelatorMatrix] {
        &self.m_seq
    }

    /// Σ_{ℓ≥1} M^(ℓ) Σ_{t∈E_ℓ} x_t v_t.
    fn weighted_sum(&self, x: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(x.ncols());
        for (ell, m) in self.m_seq.iter().enumerate().map(|(k, m)| (k + 1, m)) {
            let e = self.schedule.episode(ell);
            let block = x.rows(e.start, e.len());
            out += &m.m * (block.transpose() * v.rows(e.start, e.len()));
        }
        out
    }

    pub fn estimate(&self, theta_lasso: &DVector<f64>, problem: &RegressionProblem, sigma: f64) -> Result<DebiasedEstimate> {
        let (x, n, p0) = (&problem.x, problem.n(), problem.p0());
        if theta_lasso.len() != p0 {
            return Err(Error::Dimension(format!("estimate has length {}, design has {p0} columns", theta_lasso.len())));
        }
        check_schedule(x, &self.schedule)?;
        let resid = problem.residual(theta_lasso);
        let mut theta = theta_lasso.clone();
        if resid.iter().any(|r| *r != 0.0) && !self.m_seq.is_empty() {
            theta += self.weighted_sum(x, &resid) / n as f64;
        }
        let noise = problem.noise().map(|eps| self.weighted_sum(x, &eps) / (n as f64).sqrt());
        Ok(DebiasedEstimate {
            theta,
            variance: &self.unit_variance * (sigma * sigma),
            noise,
            bias_matrix_norm: self.bias_norm,
            method: Method::OnlineTs,
            n,
            sigma,
            covariance: None,
        })
    }

    /// Full conditional covariance (σ²/n) Σ_{ℓ≥1} Σ_{t∈E_ℓ} (M^(ℓ)x_t)(M^(ℓ)x_t)ᵀ.
    pub fn covariance(&self, x: &DMatrix<f64>, sigma: f64) -> DMatrix<f64> {
        let p0 = x.ncols();
        let mut v = DMatrix::zeros(p0, p0);
        for (ell, m) in self.m_seq.iter().enumerate().map(|(k, m)| (k + 1, m)) {
            let e = self.schedule.episode(ell);
            let proj = x.rows(e.start, e.len()) * m.m.transpose();
            v += proj.tr_mul(&proj);
        }
        v * (sigma * sigma / x.nrows() as f64)
    }
}

fn conditional_variance_unit(m_seq: &[DecorrelatorMatrix], x: &DMatrix<f64>, schedule: &EpisodeSchedule) -> DVector<f64> {
    let p0 = x.ncols();
    let mut v = DVector::zeros(p0);
    for (ell, m) in m_seq.iter().enumerate().map(|(k, m)| (k + 1, m)) {
        let e = schedule.episode(ell);
        let proj = x.rows(e.start, e.len()) * m.m.transpose();
        for (a, col) in proj.column_iter().enumerate() {
            v[a] += col.norm_squared();
        }
    }
    v / x.nrows() as f64
}

/// V_{n,a} = (σ²/n) Σ_{ℓ≥1} Σ_{t∈E_ℓ} ⟨m^ℓ_a, x_t⟩².
pub fn conditional_variance_ts(
    m_seq: &[DecorrelatorMatrix],
    problem: &RegressionProblem,
    schedule: &EpisodeSchedule,
    sigma: f64,
) -> Result<DVector<f64>> {
    check_schedule(&problem.x, schedule)?;
    Ok(conditional_variance_unit(m_seq, &problem.x, schedule) * (sigma * sigma))
}

/// Online debiased estimate for a single response coordinate.
pub fn online_debias_ts(
    theta_lasso: &DVector<f64>,
    problem: &RegressionProblem,
    schedule: &EpisodeSchedule,
    m_seq: &[DecorrelatorMatrix],
    sigma: f64,
) -> Result<DebiasedEstimate> {
    OnlineTsDebiaser::new(&problem.x, schedule.clone(), m_seq.to_vec())?.estimate(theta_lasso, problem, sigma)
}
