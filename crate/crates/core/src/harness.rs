//! Monte Carlo experiment engine: configuration, per-replicate pipelines,
//! aggregate metrics and normality diagnostics.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::debias_batch::{build_batch_m, online_debias_batch};
use crate::debias_offline::{build_offline_m, offline_debias, offline_mu, ridge_online_baseline};
use crate::debias_ts::{DebiasedEstimate, Method, OnlineTsDebiaser};
use crate::decorrelator::{solve_matrix, AdaptiveConfig};
use crate::inference::{half_width, two_sided_p};
use crate::lasso::{default_lambda, estimate_sigma, fit_lasso, LassoConfig};
use crate::linalg::{gram_rows, sym_eigen_extremes};
use crate::model::{build_ts_design, default_r0, make_schedule, Origin, RegressionProblem, VarModel};
use crate::normal;
use crate::simgen::{
    build_sigma_zeta, gen_batch_data, gen_stationary_coefficients, gen_var_series, mixture_precision, replicate_rng,
    tridiagonal, CovKind, Intermediate, DEFAULT_BURN_IN,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    Online,
    Offline,
    OfflineSparse,
    RidgeOnline,
}

impl MethodName {
    pub fn as_str(&self) -> &'static str {
        match self {
            MethodName::Online => "online",
            MethodName::Offline => "offline",
            MethodName::OfflineSparse => "offline-sparse",
            MethodName::RidgeOnline => "ridge-online",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientKind {
    /// Entries `b·Bern(q)·Unif{±1} + N(0, noise_sd²)`, redrawn per replicate.
    #[default]
    Random,
    /// Every lag matrix is `b·I`.
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// Use the known noise level.
    #[default]
    Known,
    /// Plug in the residual estimate from the LASSO fit.
    Estimate,
}

/// Which coefficients are debiased and reported.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Coordinates {
    #[default]
    All,
    /// Coordinates in the true support.
    Support,
    List(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsScenario {
    pub p: usize,
    pub d: usize,
    pub t: usize,
    pub q: f64,
    pub b: f64,
    /// Gaussian jitter on coefficient entries; 1/p when absent.
    pub noise_sd: Option<f64>,
    pub coefficients: CoefficientKind,
    pub rho: f64,
    pub cov_kind: CovKind,
    pub burn_in: usize,
    /// Response coordinates i to regress; all when absent.
    pub targets: Option<Vec<usize>>,
    pub max_coefficient_draws: usize,
}

impl Default for TsScenario {
    fn default() -> Self {
        Self {
            p: 10,
            d: 1,
            t: 50,
            q: 0.1,
            b: 0.5,
            noise_sd: None,
            coefficients: CoefficientKind::Random,
            rho: 0.1,
            cov_kind: CovKind::Power,
            burn_in: DEFAULT_BURN_IN,
            targets: None,
            max_coefficient_draws: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchScenario {
    pub p: usize,
    pub s0: usize,
    pub n1: usize,
    pub n2: usize,
    /// Tridiagonal covariance: `diag` on the diagonal, `off` next to it.
    pub diag: f64,
    pub off: f64,
    pub varsigma_bar: f64,
    pub intermediate: Intermediate,
    pub noise_sd: f64,
    /// λ = lambda_scale·λmax(Σ)·σ·√(log p / n).
    pub lambda_scale: f64,
}

impl Default for BatchScenario {
    fn default() -> Self {
        Self {
            p: 600,
            s0: 10,
            n1: 500,
            n2: 500,
            diag: 1.0,
            off: 0.1,
            varsigma_bar: 1.0,
            intermediate: Intermediate::default(),
            noise_sd: 1.0,
            lambda_scale: 2.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    Ts(TsScenario),
    Batch(BatchScenario),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// First-episode length; ⌈√n⌉ when absent.
    pub r0: Option<usize>,
    pub beta: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { r0: None, beta: 1.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub scenario: Scenario,
    /// λ₀ in λ = λ₀·σ·√(log p₀ / n) for time-series LASSO fits.
    pub lambda0: f64,
    pub sigma_mode: SigmaMode,
    pub decorrelator: AdaptiveConfig,
    pub schedule: ScheduleConfig,
    /// τ in μ = 2τ√(log p₀ / n) for the sparse offline decorrelator.
    pub offline_tau: f64,
    pub ridge_lambda: f64,
    pub methods: Vec<MethodName>,
    pub coordinates: Coordinates,
    pub alpha: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: String::new(),
            scenario: Scenario::Ts(TsScenario::default()),
            lambda0: 1.0,
            sigma_mode: SigmaMode::Known,
            decorrelator: AdaptiveConfig::default(),
            schedule: ScheduleConfig::default(),
            offline_tau: 0.5,
            ridge_lambda: 1.0,
            methods: vec![MethodName::Online],
            coordinates: Coordinates::All,
            alpha: 0.05,
            replicates: 20,
            seed: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidArgument("replicates must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("no methods requested".into()));
        }
        match &self.scenario {
            Scenario::Ts(s) => {
                if s.p == 0 || s.d == 0 || s.t <= s.d + 1 {
                    return Err(Error::InvalidArgument("time-series scenario needs p, d ≥ 1 and T > d + 1".into()));
                }
                if let Some(bad) = s.targets.iter().flatten().find(|&&i| i >= s.p) {
                    return Err(Error::InvalidArgument(format!("target {bad} out of range for p = {}", s.p)));
                }
            }
            Scenario::Batch(s) => {
                if s.s0 > s.p || s.n1 == 0 || s.p == 0 {
                    return Err(Error::InvalidArgument("batch scenario needs s0 ≤ p and n1 ≥ 1".into()));
                }
            }
        }
        Ok(())
    }
}

/// One debiased coefficient in one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub replicate: usize,
    pub method: MethodName,
    /// Response coordinate (0 for batch data).
    pub i: usize,
    /// Coefficient index within the regression.
    pub a: usize,
    pub n: usize,
    pub theta0: f64,
    pub estimate: f64,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub reject: bool,
    /// True-null flag: no spike at this entry.
    pub null: bool,
    /// W_a/√V_a when the noise component is available.
    pub noise_std: Option<f64>,
}

impl Record {
    pub fn covers(&self) -> bool {
        self.ci_low <= self.theta0 && self.theta0 <= self.ci_high
    }

    /// √(n/V)(θ̂ − θ₀); `None` when V = 0.
    pub fn rescaled_residual(&self) -> Option<f64> {
        (self.variance > 0.0).then(|| (self.n as f64 / self.variance).sqrt() * (self.estimate - self.theta0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityStats {
    pub count: usize,
    pub ks: f64,
    pub mean: f64,
    pub sd: f64,
}

/// Aggregates for one method pooled over replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: MethodName,
    pub records: usize,
    pub fpr: Option<f64>,
    pub tpr: Option<f64>,
    pub coverage: f64,
    /// Mean of 2·Φ⁻¹(1−α/2)·√V.
    pub avg_ci_length_scaled: f64,
    /// Mean of 2·Φ⁻¹(1−α/2)·√(V/n).
    pub avg_ci_length_raw: f64,
    pub mean_estimate_nonnull: Option<f64>,
    pub residual: Option<NormalityStats>,
    pub noise: Option<NormalityStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub metrics: Vec<MetricsRow>,
    pub records: Vec<Record>,
    pub failures: Vec<ReplicateFailure>,
    /// Coefficient draws rejected for non-stationarity, summed over replicates.
    pub rejected_draws: usize,
}

impl ExperimentOutput {
    pub fn metrics_for(&self, method: MethodName) -> Option<&MetricsRow> {
        self.metrics.iter().find(|m| m.method == method)
    }

    pub fn records_for(&self, method: MethodName) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.method == method)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityDiagnostics {
    pub ks_distance: f64,
    pub mean: f64,
    pub sd: f64,
    /// (Φ⁻¹((i − 0.5)/m), x_(i))
    pub qq_pairs: Vec<(f64, f64)>,
    /// (Φ(x_(i)), i/m)
    pub pp_pairs: Vec<(f64, f64)>,
}

pub const MIN_NORMALITY_SAMPLES: usize = 20;

/// Kolmogorov–Smirnov distance to N(0, 1).
pub fn ks_distance(samples: &[f64]) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let m = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal::cdf(x);
            ((i + 1) as f64 / m - f).max(f - i as f64 / m)
        })
        .fold(0.0, f64::max)
}

fn mean_sd(samples: &[f64]) -> (f64, f64) {
    let m = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / m;
    let var = if samples.len() > 1 {
        samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

pub fn normality_diagnostics(samples: &[f64]) -> Result<NormalityDiagnostics> {
    if samples.len() < MIN_NORMALITY_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "normality diagnostics need at least {MIN_NORMALITY_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let m = xs.len() as f64;
    let qq_pairs = xs.iter().enumerate().map(|(i, &x)| (normal::quantile((i as f64 + 0.5) / m), x)).collect();
    let pp_pairs = xs.iter().enumerate().map(|(i, &x)| (normal::cdf(x), (i + 1) as f64 / m)).collect();
    let (mean, sd) = mean_sd(samples);
    Ok(NormalityDiagnostics { ks_distance: ks_distance(samples), mean, sd, qq_pairs, pp_pairs })
}

fn normality_stats(samples: &[f64]) -> Option<NormalityStats> {
    if samples.is_empty() {
        return None;
    }
    let (mean, sd) = mean_sd(samples);
    Some(NormalityStats { count: samples.len(), ks: ks_distance(samples), mean, sd })
}

/// Summary row for one method, computed from its records only.
pub fn aggregate(method: MethodName, records: &[&Record], alpha: f64) -> MetricsRow {
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let nulls = records.iter().filter(|r| r.null).count();
    let false_pos = records.iter().filter(|r| r.null && r.reject).count();
    let nonnulls = records.len() - nulls;
    let true_pos = records.iter().filter(|r| !r.null && r.reject).count();
    let covered = records.iter().filter(|r| r.covers()).count();
    let z2 = 2.0 * normal::upper_quantile(alpha / 2.0);
    let count = records.len().max(1) as f64;
    let avg_ci_length_scaled = records.iter().map(|r| z2 * r.variance.sqrt()).sum::<f64>() / count;
    let avg_ci_length_raw = records.iter().map(|r| r.ci_high - r.ci_low).sum::<f64>() / count;
    let nonnull_est: Vec<f64> = records.iter().filter(|r| !r.null).map(|r| r.estimate).collect();
    let residuals: Vec<f64> = records.iter().filter_map(|r| r.rescaled_residual()).collect();
    let noise: Vec<f64> = records.iter().filter_map(|r| r.noise_std).collect();
    MetricsRow {
        method,
        records: records.len(),
        fpr: ratio(false_pos, nulls),
        tpr: ratio(true_pos, nonnulls),
        coverage: ratio(covered, records.len()).unwrap_or(0.0),
        avg_ci_length_scaled,
        avg_ci_length_raw,
        mean_estimate_nonnull: (!nonnull_est.is_empty()).then(|| nonnull_est.iter().sum::<f64>() / nonnull_est.len() as f64),
        residual: normality_stats(&residuals),
        noise: normality_stats(&noise),
    }
}

struct ReplicateOutput {
    records: Vec<Record>,
    rejected_draws: usize,
}

#[allow(clippy::too_many_arguments)]
fn push_records(
    out: &mut Vec<Record>,
    replicate: usize,
    method: MethodName,
    i: usize,
    est: &DebiasedEstimate,
    theta0: &DVector<f64>,
    nulls: &[bool],
    coords: &[usize],
    alpha: f64,
) -> Result<()> {
    for &a in coords {
        let v = est.variance[a];
        let h = half_width(v, est.n, alpha)?;
        let p = two_sided_p(est.theta[a], v, est.n);
        out.push(Record {
            replicate,
            method,
            i,
            a,
            n: est.n,
            theta0: theta0[a],
            estimate: est.theta[a],
            variance: v,
            ci_low: est.theta[a] - h,
            ci_high: est.theta[a] + h,
            p_value: p,
            reject: p <= alpha,
            null: nulls[a],
            noise_std: est.noise.as_ref().filter(|_| v > 0.0).map(|w| w[a] / v.sqrt()),
        });
    }
    Ok(())
}

fn resolve_coords(spec: &Coordinates, p0: usize, support: &[usize]) -> Result<Vec<usize>> {
    let coords = match spec {
        Coordinates::All => (0..p0).collect(),
        Coordinates::Support => support.to_vec(),
        Coordinates::List(list) => list.clone(),
    };
    if let Some(bad) = coords.iter().find(|&&a| a >= p0) {
        return Err(Error::InvalidArgument(format!("coordinate {bad} out of range for p0 = {p0}")));
    }
    Ok(coords)
}

fn run_ts_replicate(cfg: &ExperimentConfig, s: &TsScenario, replicate: usize) -> Result<ReplicateOutput> {
    let mut rng = replicate_rng(cfg.seed, replicate as u64);
    let noise_cov = build_sigma_zeta(s.p, s.rho, s.cov_kind)?;
    let (model, spikes, rejected_draws) = match s.coefficients {
        CoefficientKind::Random => {
            let (model, draw, rejected) =
                gen_stationary_coefficients(s.p, s.d, s.q, s.b, s.noise_sd.unwrap_or(1.0 / s.p as f64), &noise_cov, s.max_coefficient_draws, &mut rng)?;
            (model, draw.spikes, rejected)
        }
        CoefficientKind::Diagonal => {
            let a = DMatrix::identity(s.p, s.p) * s.b;
            let model = VarModel::new(vec![a; s.d], noise_cov.clone())?;
            let mask = DMatrix::from_fn(s.p, s.p, |i, j| i == j && s.b != 0.0);
            (model, vec![mask; s.d], 0)
        }
    };
    let series = gen_var_series(&model, s.t, s.burn_in, false, &mut rng)?;
    let x = build_ts_design(&series, s.d)?;
    let (n, p0) = (x.nrows(), x.ncols());
    let targets: Vec<usize> = s.targets.clone().unwrap_or_else(|| (0..s.p).collect());

    // null flags per response coordinate: no spike at (lag, i, j)
    let null_flags = |i: usize| -> Vec<bool> { (0..p0).map(|a| !spikes[a / s.p][(i, a % s.p)]).collect() };
    let mut support: Vec<usize> = targets
        .iter()
        .flat_map(|&i| null_flags(i).into_iter().enumerate().filter(|(_, null)| !null).map(|(a, _)| a).collect::<Vec<_>>())
        .collect();
    support.sort_unstable();
    support.dedup();
    let coords = resolve_coords(&cfg.coordinates, p0, &support)?;

    let wants = |m: MethodName| cfg.methods.contains(&m);
    let online = if wants(MethodName::Online) {
        let r0 = cfg.schedule.r0.unwrap_or_else(|| default_r0(n));
        let schedule = make_schedule(n, r0, cfg.schedule.beta)?;
        Some(OnlineTsDebiaser::fit(&x, schedule, &cfg.decorrelator, &coords)?)
    } else {
        None
    };
    let sigma_hat = gram_rows(&x, 0..n);
    let offline_m = if wants(MethodName::Offline) {
        let dc = cfg.decorrelator.resolve(&sigma_hat, n)?;
        Some(solve_matrix(&sigma_hat, &coords, &dc, None)?)
    } else {
        None
    };
    let sparse_m = if wants(MethodName::OfflineSparse) {
        Some(build_offline_m(&sigma_hat, offline_mu(p0, n, cfg.offline_tau), &coords)?)
    } else {
        None
    };

    let mut records = Vec::new();
    for &i in &targets {
        let theta0 = model.theta_for(i);
        let known_sigma = noise_cov[(i, i)].sqrt();
        let problem = RegressionProblem::new(x.clone(), DVector::from_iterator(n, series[s.d..].iter().map(|z| z[i])), Origin::Ts { coordinate: i })?
            .with_truth(theta0.clone(), known_sigma)?;
        let lambda = default_lambda(n, p0, known_sigma, cfg.lambda0);
        let fit = fit_lasso(&problem, &LassoConfig { lambda, lambda0: cfg.lambda0, ..LassoConfig::default() })?;
        let sigma = match cfg.sigma_mode {
            SigmaMode::Known => known_sigma,
            SigmaMode::Estimate => estimate_sigma(&problem, &fit.theta)?,
        };
        let nulls = null_flags(i);
        if let Some(d) = &online {
            let est = d.estimate(&fit.theta, &problem, sigma)?;
            push_records(&mut records, replicate, MethodName::Online, i, &est, &theta0, &nulls, &coords, cfg.alpha)?;
        }
        if let Some(m) = &offline_m {
            let est = offline_debias(&fit.theta, &problem, &m.m, sigma)?;
            push_records(&mut records, replicate, MethodName::Offline, i, &est, &theta0, &nulls, &coords, cfg.alpha)?;
        }
        if let Some(m) = &sparse_m {
            let mut est = offline_debias(&fit.theta, &problem, &m.m, sigma)?;
            est.method = Method::OfflineSparse;
            push_records(&mut records, replicate, MethodName::OfflineSparse, i, &est, &theta0, &nulls, &coords, cfg.alpha)?;
        }
        if wants(MethodName::RidgeOnline) {
            let est = ridge_online_baseline(&fit.theta, &problem, cfg.ridge_lambda, &coords, sigma)?;
            push_records(&mut records, replicate, MethodName::RidgeOnline, i, &est, &theta0, &nulls, &coords, cfg.alpha)?;
        }
    }
    Ok(ReplicateOutput { records, rejected_draws })
}

fn run_batch_replicate(cfg: &ExperimentConfig, s: &BatchScenario, replicate: usize) -> Result<ReplicateOutput> {
    let mut rng = replicate_rng(cfg.seed, replicate as u64);
    let sigma_x = tridiagonal(s.p, s.diag, s.off);
    let mut support: Vec<usize> = sample(&mut rng, s.p, s.s0).into_vec();
    support.sort_unstable();
    let theta0 = DVector::from_fn(s.p, |a, _| if support.binary_search(&a).is_ok() { 1.0 } else { 0.0 });
    let (design, problem) = gen_batch_data(&theta0, &sigma_x, s.n1, s.n2, s.varsigma_bar, s.intermediate, s.noise_sd, &mut rng)?;
    let (n, p) = (problem.n(), problem.p0());
    let (_, lmax) = sym_eigen_extremes(&sigma_x);
    let lambda = s.lambda_scale * lmax * s.noise_sd * ((p as f64).ln() / n as f64).sqrt();
    let fit = fit_lasso(&problem, &LassoConfig::with_lambda(lambda))?;
    let sigma = match cfg.sigma_mode {
        SigmaMode::Known => s.noise_sd,
        SigmaMode::Estimate => estimate_sigma(&problem, &fit.theta)?,
    };
    let coords = resolve_coords(&cfg.coordinates, p, &support)?;
    let nulls: Vec<bool> = theta0.iter().map(|v| *v == 0.0).collect();
    let mut records = Vec::new();
    for &method in &cfg.methods {
        let est = match method {
            MethodName::Online => {
                let (m1, m2) = build_batch_m(&design, &cfg.decorrelator, &coords)?;
                online_debias_batch(&fit.theta, &design, &m1, &m2, sigma, Some(&theta0))?
            }
            MethodName::Offline => {
                // population precision of the pooled design
                let omega = if s.varsigma_bar.is_finite() && design.theta_int.iter().any(|v| *v != 0.0) {
                    let w = s.n1 as f64 / n as f64;
                    mixture_precision(&sigma_x, &design.theta_int, s.varsigma_bar, w)?
                } else {
                    crate::linalg::spd_inverse(&sigma_x)?
                };
                offline_debias(&fit.theta, &problem, &omega, sigma)?
            }
            MethodName::OfflineSparse => {
                let sigma_hat = gram_rows(&problem.x, 0..n);
                let m = build_offline_m(&sigma_hat, offline_mu(p, n, cfg.offline_tau), &coords)?;
                let mut est = offline_debias(&fit.theta, &problem, &m.m, sigma)?;
                est.method = Method::OfflineSparse;
                est
            }
            MethodName::RidgeOnline => ridge_online_baseline(&fit.theta, &problem, cfg.ridge_lambda, &coords, sigma)?,
        };
        push_records(&mut records, replicate, method, 0, &est, &theta0, &nulls, &coords, cfg.alpha)?;
    }
    Ok(ReplicateOutput { records, rejected_draws: 0 })
}

/// Runs every replicate (in parallel), pools the records and summarizes each
/// method. Failed replicates are excluded and listed in the output.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let results: Vec<Result<ReplicateOutput>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| match &config.scenario {
            Scenario::Ts(s) => run_ts_replicate(config, s, r),
            Scenario::Batch(s) => run_batch_replicate(config, s, r),
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut rejected_draws = 0;
    for (replicate, res) in results.into_iter().enumerate() {
        match res {
            Ok(out) => {
                records.extend(out.records);
                rejected_draws += out.rejected_draws;
            }
            Err(e) => failures.push(ReplicateFailure { replicate, error: e.to_string() }),
        }
    }
    let metrics = config
        .methods
        .iter()
        .map(|&m| {
            let rs: Vec<&Record> = records.iter().filter(|r| r.method == m).collect();
            aggregate(m, &rs, config.alpha)
        })
        .collect();
    Ok(ExperimentOutput { config: config.clone(), metrics, records, failures, rejected_draws })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_ts() -> ExperimentConfig {
        ExperimentConfig {
            scenario: Scenario::Ts(TsScenario { p: 4, d: 1, t: 40, q: 0.3, b: 0.4, ..TsScenario::default() }),
            methods: vec![MethodName::Online, MethodName::Offline, MethodName::OfflineSparse, MethodName::RidgeOnline],
            replicates: 3,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn diagnostics_examples() {
        let m = 100;
        let perfect: Vec<f64> = (1..=m).map(|i| normal::quantile((i as f64 - 0.5) / m as f64)).collect();
        let d = normality_diagnostics(&perfect).unwrap();
        assert!(d.ks_distance < 0.01);
        assert_eq!(d.qq_pairs.len(), m);
        assert!((d.qq_pairs[0].0 - d.qq_pairs[0].1).abs() < 1e-12);
        assert!(normality_diagnostics(&[0.3; 50]).unwrap().ks_distance >= 0.5);
        assert!(normality_diagnostics(&[0.0; 19]).is_err());

        use rand::Rng;
        let mut rng = replicate_rng(42, 0);
        let xs: Vec<f64> = (0..10_000).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let d = normality_diagnostics(&xs).unwrap();
        assert!(d.mean.abs() < 0.04 && (d.sd - 1.0).abs() < 0.03);
    }

    #[test]
    fn deterministic_and_aggregation_exact() {
        let cfg = small_ts();
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.failures.is_empty());
        for row in &a.metrics {
            let rs: Vec<&Record> = a.records_for(row.method).collect();
            assert_eq!(&aggregate(row.method, &rs, cfg.alpha), row);
            let nulls = rs.iter().filter(|r| r.null).count();
            let fp = rs.iter().filter(|r| r.null && r.reject).count();
            assert_eq!(row.fpr, Some(fp as f64 / nulls as f64));
        }
    }

    #[test]
    fn replicate_order_does_not_matter() {
        let cfg = small_ts();
        let all = run_experiment(&cfg).unwrap();
        let single = run_experiment(&ExperimentConfig { replicates: 1, ..cfg.clone() }).unwrap();
        let first: Vec<&Record> = all.records.iter().filter(|r| r.replicate == 0).collect();
        assert_eq!(first, single.records.iter().collect::<Vec<_>>());
    }

    #[test]
    fn alpha_one_rejects_everything() {
        let cfg = ExperimentConfig { alpha: 1.0, replicates: 1, ..small_ts() };
        let out = run_experiment(&cfg).unwrap();
        assert!(out.records.iter().all(|r| r.reject));
        let online = out.metrics_for(MethodName::Online).unwrap();
        assert_eq!(online.coverage, 0.0);
    }

    #[test]
    fn invalid_configs() {
        assert!(run_experiment(&ExperimentConfig { replicates: 0, ..small_ts() }).is_err());
        assert!(run_experiment(&ExperimentConfig { methods: vec![], ..small_ts() }).is_err());
    }

    #[test]
    fn small_batch_runs() {
        let cfg = ExperimentConfig {
            scenario: Scenario::Batch(BatchScenario { p: 30, s0: 3, n1: 40, n2: 40, ..BatchScenario::default() }),
            methods: vec![MethodName::Online, MethodName::Offline, MethodName::OfflineSparse, MethodName::RidgeOnline],
            coordinates: Coordinates::Support,
            replicates: 2,
            ..ExperimentConfig::default()
        };
        let out = run_experiment(&cfg).unwrap();
        assert!(out.failures.is_empty(), "{:?}", out.failures);
        assert_eq!(out.records.len(), 2 * 4 * 3);
        assert!(out.records.iter().all(|r| !r.null && r.noise_std.is_some()));
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = small_ts();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let minimal: ExperimentConfig = serde_json::from_str(r#"{"scenario": {"kind": "batch"}, "replicates": 2}"#).unwrap();
        assert!(matches!(minimal.scenario, Scenario::Batch(ref b) if b.p == 600));
    }
}
