//! Decorrelating vectors: rows `m_a` of an approximate inverse of a sample
//! covariance, solving
//!
//! ```text
//! minimize ½ mᵀΣ̂m − m_a + μ‖m‖₁   subject to ‖m‖₁ ≤ L
//! ```
//!
//! by cyclic coordinate descent or proximal gradient, with KKT diagnostics.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{l1_operator_norm, power_iteration, spd_inverse};
use crate::{Error, Result};

/// Number of times μ is doubled when a row misses the ‖Σ̂m − e_a‖∞ ≤ μ target.
pub const MAX_MU_DOUBLINGS: usize = 6;

// sweep/projection alternation can cycle once the budget binds
const PROJECTED_SWEEPS_BEFORE_POLISH: usize = 25;
const POLISH_KKT_TOL: f64 = 1e-8;
/// Gap allowed above μ before doubling, absorbing solver inexactness.
pub const FEASIBILITY_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    #[default]
    Cd,
    Pgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecorrelatorConfig {
    pub mu: f64,
    /// ℓ1 budget L; `None` is unbounded.
    pub l1_bound: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub solver: Solver,
    /// PGD step size 1/η; defaults to 1/λmax(Σ̂).
    pub step: Option<f64>,
}

impl Default for DecorrelatorConfig {
    fn default() -> Self {
        Self { mu: 0.1, l1_bound: None, tol: 1e-9, max_iter: 20_000, solver: Solver::Cd, step: None }
    }
}

impl DecorrelatorConfig {
    pub fn with_mu(mu: f64) -> Self {
        Self { mu, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecorrelatorRow {
    pub m: DVector<f64>,
    /// ‖Σ̂m − e_a‖∞
    pub feasibility_gap: f64,
    /// mᵀΣ̂m
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Per-row diagnostics kept alongside a [`DecorrelatorMatrix`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowDiagnostics {
    pub a: usize,
    /// μ actually used after any doubling.
    pub mu: f64,
    pub feasibility_gap: f64,
    pub objective: f64,
    pub kkt: f64,
    pub converged: bool,
}

/// Decorrelating matrix. Row `a` of `m` is `m_a` for every solved coordinate
/// in `rows`; unsolved rows are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecorrelatorMatrix {
    pub m: DMatrix<f64>,
    pub rows: Vec<usize>,
    pub diagnostics: Vec<RowDiagnostics>,
    pub mu: f64,
    pub l1_bound: Option<f64>,
}

impl DecorrelatorMatrix {
    /// All-zero matrix over the given coordinates.
    pub fn zeros(p0: usize, rows: Vec<usize>) -> Self {
        Self { m: DMatrix::zeros(p0, p0), rows, diagnostics: Vec::new(), mu: 0.0, l1_bound: None }
    }

    /// Wraps an explicit matrix, treating every row as solved.
    pub fn from_matrix(m: DMatrix<f64>) -> Self {
        let rows = (0..m.nrows()).collect();
        Self { m, rows, diagnostics: Vec::new(), mu: 0.0, l1_bound: None }
    }

    pub fn p0(&self) -> usize {
        self.m.ncols()
    }

    pub fn row(&self, a: usize) -> DVector<f64> {
        self.m.row(a).transpose()
    }

    pub fn converged(&self) -> bool {
        self.diagnostics.iter().all(|d| d.converged)
    }
}

/// η(z; μ): shrinks toward zero by μ. Ties |z| = μ go to zero.
pub fn soft_threshold(z: f64, mu: f64) -> f64 {
    if z > mu {
        z - mu
    } else if z < -mu {
        z + mu
    } else {
        0.0
    }
}

pub fn soft_threshold_vec(v: &DVector<f64>, mu: f64) -> DVector<f64> {
    v.map(|z| soft_threshold(z, mu))
}

/// Euclidean projection onto the ℓ1 ball of radius `l`, by sorting.
pub fn project_l1(v: &DVector<f64>, l: f64) -> DVector<f64> {
    if v.lp_norm(1) <= l {
        return v.clone();
    }
    let mut u: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut shift = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - l) / (j + 1) as f64;
        if uj - t > 0.0 {
            shift = t;
        } else {
            break;
        }
    }
    v.map(|x| x.signum() * (x.abs() - shift).max(0.0))
}

fn check_inputs(sigma: &DMatrix<f64>, a: usize, config: &DecorrelatorConfig) -> Result<()> {
    let p = sigma.nrows();
    if sigma.ncols() != p {
        return Err(Error::Dimension("covariance must be square".into()));
    }
    if a >= p {
        return Err(Error::Dimension(format!("coordinate {a} out of range for p0 = {p}")));
    }
    if !(config.mu >= 0.0) {
        return Err(Error::InvalidArgument(format!("mu must be non-negative, got {}", config.mu)));
    }
    if let Some(l) = config.l1_bound {
        if !(l > 0.0) {
            return Err(Error::InvalidArgument(format!("l1 bound must be positive, got {l}")));
        }
    }
    if let Some(j) = (0..p).find(|&j| !(sigma[(j, j)] > 0.0)) {
        return Err(Error::Singular(format!("zero diagonal entry {j} in covariance")));
    }
    Ok(())
}

fn finish_row(sigma: &DMatrix<f64>, a: usize, m: DVector<f64>, converged: bool, iterations: usize) -> DecorrelatorRow {
    let sm = sigma * &m;
    let objective = m.dot(&sm);
    let mut g = sm;
    g[a] -= 1.0;
    DecorrelatorRow { feasibility_gap: g.amax(), objective, m, converged, iterations }
}

/// ½mᵀΣ̂m − m_a + μ‖m‖₁.
pub fn lagrangian_objective(sigma: &DMatrix<f64>, a: usize, m: &DVector<f64>, mu: f64) -> f64 {
    0.5 * m.dot(&(sigma * m)) - m[a] + mu * m.lp_norm(1)
}

fn on_boundary(m: &DVector<f64>, l1_bound: Option<f64>) -> bool {
    l1_bound.is_some_and(|l| m.lp_norm(1) >= l * (1.0 - 1e-9))
}

/// Cyclic coordinate descent, projecting onto the ℓ1 ball after each sweep.
/// When the budget binds and the result is not stationary, it is polished by
/// proximal gradient from the CD iterate.
pub fn solve_row_cd(
    sigma: &DMatrix<f64>,
    a: usize,
    config: &DecorrelatorConfig,
    init: Option<&DVector<f64>>,
) -> Result<DecorrelatorRow> {
    check_inputs(sigma, a, config)?;
    let p = sigma.nrows();
    let mu = config.mu;
    let mut m = match init {
        Some(v) if v.len() == p => v.clone(),
        Some(v) => return Err(Error::Dimension(format!("warm start has length {}, expected {p}", v.len()))),
        None => DVector::zeros(p),
    };
    if let Some(l) = config.l1_bound {
        m = project_l1(&m, l);
    }
    let mut sm = sigma * &m;
    let mut converged = false;
    let mut iterations = 0;
    let mut projected_sweeps = 0;
    while iterations < config.max_iter {
        iterations += 1;
        let mut max_change = 0.0_f64;
        for j in 0..p {
            let d = sigma[(j, j)];
            let old = m[j];
            let target = if j == a { 1.0 } else { 0.0 };
            let z = target - (sm[j] - d * old);
            let new = soft_threshold(z, mu) / d;
            let delta = new - old;
            if delta != 0.0 {
                m[j] = new;
                sm.axpy(delta, &sigma.column(j), 1.0);
                max_change = max_change.max(delta.abs());
            }
        }
        if let Some(l) = config.l1_bound {
            if m.lp_norm(1) > l {
                let projected = project_l1(&m, l);
                max_change = max_change.max((&projected - &m).amax());
                m = projected;
                sm = sigma * &m;
                projected_sweeps += 1;
            }
        }
        if max_change < config.tol {
            converged = true;
            break;
        }
        if projected_sweeps >= PROJECTED_SWEEPS_BEFORE_POLISH {
            break;
        }
    }
    let row = finish_row(sigma, a, m, converged, iterations);
    if !converged || (on_boundary(&row.m, config.l1_bound) && kkt_residual(sigma, &row, a, mu, config.l1_bound) > POLISH_KKT_TOL) {
        let mut polished = polish_accelerated(sigma, a, config, row.m)?;
        polished.iterations += iterations;
        return Ok(polished);
    }
    Ok(row)
}

fn pgd_step(config: &DecorrelatorConfig, sigma: &DMatrix<f64>) -> Result<f64> {
    match config.step {
        Some(s) if s > 0.0 => Ok(s),
        Some(s) => Err(Error::InvalidArgument(format!("step must be positive, got {s}"))),
        None => Ok(1.0 / power_iteration(sigma, 10_000, 1e-12)),
    }
}

/// Accelerated proximal gradient with function-value restarts, used to finish
/// CD runs where the ℓ1 budget binds. Stops on a small step or once the KKT
/// residual drops below [`POLISH_KKT_TOL`].
fn polish_accelerated(sigma: &DMatrix<f64>, a: usize, config: &DecorrelatorConfig, start: DVector<f64>) -> Result<DecorrelatorRow> {
    let step = pgd_step(config, sigma)?;
    let prox = |v: &DVector<f64>| {
        let g = {
            let mut g = sigma * v;
            g[a] -= 1.0;
            g
        };
        let next = soft_threshold_vec(&(v - g * step), config.mu * step);
        match config.l1_bound {
            Some(l) => project_l1(&next, l),
            None => next,
        }
    };
    let mut m = start;
    let mut y = m.clone();
    let mut t = 1.0_f64;
    let mut f = lagrangian_objective(sigma, a, &m, config.mu);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        iterations += 1;
        let next = prox(&y);
        let f_next = lagrangian_objective(sigma, a, &next, config.mu);
        if f_next > f && t > 1.0 {
            // restart from the last iterate; a plain step is always accepted
            y = m.clone();
            t = 1.0;
            continue;
        }
        let change = (&next - &m).amax();
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + (&next - &m) * ((t - 1.0) / t_next);
        m = next;
        f = f_next;
        t = t_next;
        if change < config.tol {
            converged = true;
            break;
        }
        if iterations % 10 == 0 {
            let row = finish_row(sigma, a, m.clone(), true, iterations);
            if kkt_residual(sigma, &row, a, config.mu, config.l1_bound) < POLISH_KKT_TOL {
                return Ok(row);
            }
        }
    }
    Ok(finish_row(sigma, a, m, converged, iterations))
}

/// Proximal gradient: m ← Π_L(η(m − (Σ̂m − e_a)/η; μ/η)).
pub fn solve_row_pgd(
    sigma: &DMatrix<f64>,
    a: usize,
    config: &DecorrelatorConfig,
    init: Option<&DVector<f64>>,
) -> Result<DecorrelatorRow> {
    check_inputs(sigma, a, config)?;
    let p = sigma.nrows();
    let step = pgd_step(config, sigma)?;
    let mut m = match init {
        Some(v) if v.len() == p => v.clone(),
        Some(v) => return Err(Error::Dimension(format!("warm start has length {}, expected {p}", v.len()))),
        None => DVector::zeros(p),
    };
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        iterations += 1;
        let mut g = sigma * &m;
        g[a] -= 1.0;
        let mut next = soft_threshold_vec(&(&m - g * step), config.mu * step);
        if let Some(l) = config.l1_bound {
            next = project_l1(&next, l);
        }
        let change = (&next - &m).amax();
        m = next;
        if change < config.tol {
            converged = true;
            break;
        }
    }
    Ok(finish_row(sigma, a, m, converged, iterations))
}

/// Dispatches on [`DecorrelatorConfig::solver`].
pub fn solve_row(
    sigma: &DMatrix<f64>,
    a: usize,
    config: &DecorrelatorConfig,
    init: Option<&DVector<f64>>,
) -> Result<DecorrelatorRow> {
    match config.solver {
        Solver::Cd => solve_row_cd(sigma, a, config, init),
        Solver::Pgd => solve_row_pgd(sigma, a, config, init),
    }
}

/// Largest violation of stationarity `Σ̂m − e_a + μ's = 0`, `s ∈ ∂‖m‖₁`.
/// Inside the ℓ1 ball μ' = μ; on its boundary the multiplier of the budget
/// constraint is absorbed into μ' ≥ μ, estimated from the support.
pub fn kkt_residual(sigma: &DMatrix<f64>, row: &DecorrelatorRow, a: usize, mu: f64, l1_bound: Option<f64>) -> f64 {
    let m = &row.m;
    let mut g = sigma * m;
    g[a] -= 1.0;
    let mut mu_eff = mu;
    if on_boundary(m, l1_bound) {
        let support: Vec<usize> = (0..m.len()).filter(|&j| m[j] != 0.0).collect();
        if !support.is_empty() {
            let mean = support.iter().map(|&j| -g[j] * m[j].signum()).sum::<f64>() / support.len() as f64;
            mu_eff = mu_eff.max(mean);
        }
    }
    (0..m.len())
        .map(|j| {
            if m[j] != 0.0 {
                (g[j] + mu_eff * m[j].signum()).abs()
            } else {
                (g[j].abs() - mu_eff).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Solves row `a`, doubling μ (up to [`MAX_MU_DOUBLINGS`] times) while the
/// feasibility gap exceeds μ. Returns the row and the μ used.
pub fn solve_row_feasible(
    sigma: &DMatrix<f64>,
    a: usize,
    config: &DecorrelatorConfig,
    init: Option<&DVector<f64>>,
) -> Result<(DecorrelatorRow, f64)> {
    let mut cfg = *config;
    let mut row = solve_row(sigma, a, &cfg, init)?;
    let mut doublings = 0;
    while row.feasibility_gap > cfg.mu + FEASIBILITY_SLACK && doublings < MAX_MU_DOUBLINGS {
        // A binding budget makes the gap equal to the effective multiplier μ',
        // and every μ < μ' has the same solution, so those solves are skipped.
        let skip = on_boundary(&row.m, cfg.l1_bound) && row.converged;
        loop {
            cfg.mu *= 2.0;
            doublings += 1;
            if !skip || cfg.mu + FEASIBILITY_SLACK >= row.feasibility_gap || doublings == MAX_MU_DOUBLINGS {
                break;
            }
        }
        row = solve_row(sigma, a, &cfg, Some(&row.m))?;
    }
    Ok((row, cfg.mu))
}

/// Solves the listed rows in parallel against a shared covariance. `init`
/// supplies warm starts row by row.
pub fn solve_matrix(
    sigma: &DMatrix<f64>,
    rows: &[usize],
    config: &DecorrelatorConfig,
    init: Option<&DMatrix<f64>>,
) -> Result<DecorrelatorMatrix> {
    let p0 = sigma.nrows();
    if let Some(w) = init {
        if w.nrows() != p0 || w.ncols() != p0 {
            return Err(Error::Dimension("warm-start matrix shape mismatch".into()));
        }
    }
    let solved: Vec<(DecorrelatorRow, f64)> = rows
        .par_iter()
        .map(|&a| {
            let warm = init.map(|w| w.row(a).transpose());
            solve_row_feasible(sigma, a, config, warm.as_ref())
        })
        .collect::<Result<_>>()?;
    let mut m = DMatrix::zeros(p0, p0);
    let mut diagnostics = Vec::with_capacity(rows.len());
    for (&a, (row, mu)) in rows.iter().zip(&solved) {
        m.set_row(a, &row.m.transpose());
        diagnostics.push(RowDiagnostics {
            a,
            mu: *mu,
            feasibility_gap: row.feasibility_gap,
            objective: row.objective,
            kkt: kkt_residual(sigma, row, a, *mu, config.l1_bound),
            converged: row.converged,
        });
    }
    Ok(DecorrelatorMatrix { m, rows: rows.to_vec(), diagnostics, mu: config.mu, l1_bound: config.l1_bound })
}

/// c_μ·√(log p₀ / n_ℓ).
pub fn default_mu(p0: usize, n_ell: usize, c_mu: f64) -> f64 {
    c_mu * ((p0 as f64).ln() / n_ell as f64).sqrt()
}

/// Online ℓ1 budget L₀·‖(Σ̂ + ρI)⁻¹‖₁.
pub fn ridge_l1_bound(sigma: &DMatrix<f64>, ridge: f64, l0: f64) -> Result<f64> {
    let p = sigma.nrows();
    let reg = sigma + DMatrix::identity(p, p) * ridge;
    Ok(l0 * l1_operator_norm(&spd_inverse(&reg)?))
}

/// Decorrelator settings that adapt to the sample count: μ = c_μ√(log p₀/n)
/// and, when `l0` is set, L = L₀·‖(Σ̂ + μI)⁻¹‖₁.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveConfig {
    pub c_mu: f64,
    pub l0: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub solver: Solver,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self { c_mu: 1.0, l0: Some(2.0), tol: 1e-9, max_iter: 20_000, solver: Solver::Cd }
    }
}

impl AdaptiveConfig {
    pub fn unbounded(c_mu: f64) -> Self {
        Self { c_mu, l0: None, ..Self::default() }
    }

    /// Concrete configuration for a covariance estimated from `n` samples.
    pub fn resolve(&self, sigma_hat: &DMatrix<f64>, n: usize) -> Result<DecorrelatorConfig> {
        let mu = default_mu(sigma_hat.nrows(), n, self.c_mu);
        let l1_bound = match self.l0 {
            Some(l0) => Some(ridge_l1_bound(sigma_hat, mu, l0)?),
            None => None,
        };
        Ok(DecorrelatorConfig { mu, l1_bound, tol: self.tol, max_iter: self.max_iter, solver: self.solver, step: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_psd(p: usize, k: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_fn(k, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        b.tr_mul(&b) / k as f64 + DMatrix::identity(p, p) * 0.05
    }

    #[test]
    fn soft_threshold_branches() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-2.5, 1.0), -1.5);
        assert_eq!(soft_threshold(1.0, 1.0), 0.0);
        assert_eq!(soft_threshold(-1.0, 1.0), 0.0);
    }

    #[test]
    fn projection_examples() {
        let v = DVector::from_vec(vec![0.3, -0.2]);
        assert_eq!(project_l1(&v, 1.0), v);
        assert_eq!(project_l1(&DVector::from_vec(vec![2.0, 0.0]), 1.0).as_slice(), &[1.0, 0.0]);
        let w = project_l1(&DVector::from_vec(vec![1.0, 1.0]), 1.0);
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
        let w = project_l1(&DVector::from_vec(vec![-3.0, 1.0, 0.5]), 2.0);
        assert!((w - DVector::from_vec(vec![-2.0, 0.0, 0.0])).amax() < 1e-15);
    }

    #[test]
    fn scalar_and_identity_examples() {
        let cfg = DecorrelatorConfig::with_mu(0.1);
        let s = DMatrix::from_element(1, 1, 2.0);
        for row in [solve_row_cd(&s, 0, &cfg, None).unwrap(), solve_row_pgd(&s, 0, &cfg, None).unwrap()] {
            assert!((row.m[0] - 0.45).abs() < 1e-8);
            assert!(kkt_residual(&s, &row, 0, 0.1, None) < 1e-9);
        }
        let id = DMatrix::identity(4, 4);
        let cfg = DecorrelatorConfig::with_mu(0.2);
        for a in 0..4 {
            let row = solve_row_cd(&id, a, &cfg, None).unwrap();
            let pg = solve_row_pgd(&id, a, &cfg, None).unwrap();
            let expected = DVector::from_fn(4, |j, _| if j == a { 0.8 } else { 0.0 });
            assert!((&row.m - &expected).amax() < 1e-10);
            assert!((&pg.m - &expected).amax() < 1e-8);
        }
        let big = DecorrelatorConfig::with_mu(1.0);
        assert!(solve_row_cd(&id, 1, &big, None).unwrap().m.iter().all(|v| *v == 0.0));
        assert!(solve_row_pgd(&id, 1, &big, None).unwrap().m.iter().all(|v| *v == 0.0));
        let row = solve_row_cd(&id, 1, &big, None).unwrap();
        assert_eq!(kkt_residual(&id, &row, 1, 1.0, None), 0.0);
    }

    #[test]
    fn pgd_unregularized_and_fixed_point() {
        let id = DMatrix::identity(3, 3);
        let row = solve_row_pgd(&id, 2, &DecorrelatorConfig::with_mu(0.0), None).unwrap();
        assert!((row.m[2] - 1.0).abs() < 1e-12);
        let s = random_psd(6, 20, 3);
        let cfg = DecorrelatorConfig::with_mu(0.05);
        let exact = solve_row_cd(&s, 1, &DecorrelatorConfig { tol: 1e-14, ..cfg }, None).unwrap();
        let again = solve_row_pgd(&s, 1, &DecorrelatorConfig { tol: 1e-6, ..cfg }, Some(&exact.m)).unwrap();
        assert!(again.iterations <= 1);
    }

    #[test]
    fn non_optimal_point_has_positive_residual() {
        let s = random_psd(5, 12, 4);
        let row = finish_row(&s, 0, DVector::from_element(5, 0.3), false, 0);
        assert!(kkt_residual(&s, &row, 0, 0.1, None) > 1e-3);
    }

    #[test]
    fn zero_diagonal_is_singular() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert!(matches!(solve_row_cd(&s, 0, &DecorrelatorConfig::default(), None), Err(Error::Singular(_))));
        assert!(matches!(solve_row_pgd(&s, 0, &DecorrelatorConfig::default(), None), Err(Error::Singular(_))));
    }

    #[test]
    fn budget_binds_and_stays_stationary() {
        let s = random_psd(8, 10, 5);
        let cfg = DecorrelatorConfig { mu: 0.01, l1_bound: Some(0.5), ..DecorrelatorConfig::default() };
        let cd = solve_row_cd(&s, 2, &cfg, None).unwrap();
        let pg = solve_row_pgd(&s, 2, &cfg, None).unwrap();
        assert!(cd.m.lp_norm(1) <= 0.5 * (1.0 + 1e-9));
        assert!(kkt_residual(&s, &cd, 2, 0.01, Some(0.5)) < 1e-6);
        let (fc, fp) = (lagrangian_objective(&s, 2, &cd.m, 0.01), lagrangian_objective(&s, 2, &pg.m, 0.01));
        assert!((fc - fp).abs() < 1e-6);
    }

    #[test]
    fn doubling_fallback_reaches_feasibility() {
        let s = random_psd(6, 30, 6);
        let cfg = DecorrelatorConfig { mu: 0.01, l1_bound: Some(0.2), ..DecorrelatorConfig::default() };
        let (row, mu) = solve_row_feasible(&s, 0, &cfg, None).unwrap();
        assert!(mu > 0.01);
        assert!(row.feasibility_gap <= mu + 1e-8 || mu == 0.01 * 64.0);
    }

    #[test]
    fn matrix_rows_and_mu_rule() {
        let id = DMatrix::identity(3, 3);
        let m = solve_matrix(&id, &[0, 2], &DecorrelatorConfig::with_mu(0.2), None).unwrap();
        assert!((m.m[(0, 0)] - 0.8).abs() < 1e-12 && (m.m[(2, 2)] - 0.8).abs() < 1e-12);
        assert_eq!(m.m[(1, 1)], 0.0);
        assert_eq!(m.rows, vec![0, 2]);
        assert!((default_mu(100, 100, 1.0) - (100f64.ln() / 100.0).sqrt()).abs() < 1e-15);
        assert!((ridge_l1_bound(&id, 1.0, 2.0).unwrap() - 1.0).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn projection_idempotent_and_feasible(v in proptest::collection::vec(-5.0f64..5.0, 1..20), l in 0.1f64..4.0) {
            let v = DVector::from_vec(v);
            let w = project_l1(&v, l);
            prop_assert!(w.lp_norm(1) <= l * (1.0 + 1e-12));
            let ww = project_l1(&w, l);
            prop_assert!((&ww - &w).amax() < 1e-12);
        }

        #[test]
        fn gap_within_mu_when_unbounded(seed in 0u64..10_000, p in 1usize..12, mu in 0.01f64..0.8) {
            let s = random_psd(p, 2 * p + 2, seed);
            let cfg = DecorrelatorConfig::with_mu(mu);
            let row = solve_row_cd(&s, 0, &cfg, None).unwrap();
            prop_assert!(row.feasibility_gap <= mu + 1e-7);
        }
    }
}
