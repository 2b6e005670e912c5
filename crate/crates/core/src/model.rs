//! Model and data types shared by every estimator: VAR(d) models, regression
//! problems, episode schedules and the spectral summary of a VAR process.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{is_symmetric, sym_eigen_extremes};
use crate::{Error, Result};

/// Default number of unit-circle points for [`spectral_params`].
pub const DEFAULT_SPECTRAL_GRID: usize = 512;

/// A Gaussian vector autoregression `z_t = Σ_ℓ A^(ℓ) z_{t−ℓ} + ζ_t`,
/// `ζ_t ~ N(0, Σ_ζ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarModel {
    coeffs: Vec<DMatrix<f64>>,
    noise_cov: DMatrix<f64>,
}

impl VarModel {
    pub fn new(coeffs: Vec<DMatrix<f64>>, noise_cov: DMatrix<f64>) -> Result<Self> {
        let p = noise_cov.nrows();
        if coeffs.is_empty() {
            return Err(Error::Dimension("a VAR model needs at least one lag".into()));
        }
        if p == 0 || noise_cov.ncols() != p {
            return Err(Error::Dimension("noise covariance must be a non-empty square matrix".into()));
        }
        if let Some(bad) = coeffs.iter().position(|a| a.nrows() != p || a.ncols() != p) {
            return Err(Error::Dimension(format!("coefficient matrix {} is not {p}x{p}", bad + 1)));
        }
        if !is_symmetric(&noise_cov, 1e-10) {
            return Err(Error::NotPositiveDefinite("noise covariance is not symmetric".into()));
        }
        let (min_eig, _) = sym_eigen_extremes(&noise_cov);
        if min_eig <= 0.0 {
            return Err(Error::NotPositiveDefinite(format!(
                "noise covariance has eigenvalue {min_eig:e}"
            )));
        }
        Ok(Self { coeffs, noise_cov })
    }

    pub fn p(&self) -> usize {
        self.noise_cov.nrows()
    }

    pub fn d(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[DMatrix<f64>] {
        &self.coeffs
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    /// Regression target for response coordinate `i`: the stacked rows
    /// `(A^(1)_i, …, A^(d)_i)` as a length `d·p` vector.
    pub fn theta_for(&self, i: usize) -> DVector<f64> {
        let p = self.p();
        DVector::from_iterator(
            self.d() * p,
            self.coeffs.iter().flat_map(|a| (0..p).map(move |j| a[(i, j)])),
        )
    }

    /// The `dp × dp` companion matrix of the process.
    pub fn companion(&self) -> DMatrix<f64> {
        let (p, d) = (self.p(), self.d());
        let mut c = DMatrix::zeros(d * p, d * p);
        for (l, a) in self.coeffs.iter().enumerate() {
            c.view_mut((0, l * p), (p, p)).copy_from(a);
        }
        for k in 1..d {
            for j in 0..p {
                c[(k * p + j, (k - 1) * p + j)] = 1.0;
            }
        }
        c
    }

    /// Spectral radius of the companion matrix. The process is stationary
    /// exactly when this is below one.
    pub fn spectral_radius(&self) -> f64 {
        let c = self.companion();
        match nalgebra::Schur::try_new(c.clone(), f64::EPSILON, 10_000) {
            Some(schur) => schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max),
            None => gelfand_radius(c),
        }
    }

    pub fn is_stationary(&self) -> bool {
        self.spectral_radius() < 1.0
    }
}

/// ‖C^k‖^{1/k} with k = 2^40, by normalized repeated squaring. Used when the
/// QR iteration does not converge.
fn gelfand_radius(mut c: DMatrix<f64>) -> f64 {
    let mut log_scale = 0.0;
    let mut k = 1.0;
    for _ in 0..40 {
        let norm = c.norm();
        if norm == 0.0 {
            return 0.0;
        }
        c /= norm;
        log_scale += norm.ln() / k;
        c = &c * &c;
        k *= 2.0;
    }
    (log_scale + c.norm().ln() / k).exp()
}

/// Where a regression problem came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    /// Row-wise regression of coordinate `coordinate` of a VAR series.
    Ts { coordinate: usize },
    /// Two-batch collection with the first `n1` rows non-adaptive.
    Batch { n1: usize, n2: usize },
    Generic,
}

/// Linear model `y = Xθ₀ + ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionProblem {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub theta0: Option<DVector<f64>>,
    pub sigma: Option<f64>,
    pub origin: Origin,
}

impl RegressionProblem {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, origin: Origin) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Dimension(format!(
                "design has {} rows but response has length {}",
                x.nrows(),
                y.len()
            )));
        }
        if let Origin::Batch { n1, n2 } = origin {
            if n1 + n2 != x.nrows() {
                return Err(Error::Dimension(format!(
                    "batch sizes {n1}+{n2} do not match {} rows",
                    x.nrows()
                )));
            }
        }
        Ok(Self { x, y, theta0: None, sigma: None, origin })
    }

    pub fn with_truth(mut self, theta0: DVector<f64>, sigma: f64) -> Result<Self> {
        if theta0.len() != self.p0() {
            return Err(Error::Dimension(format!(
                "theta0 has length {} but design has {} columns",
                theta0.len(),
                self.p0()
            )));
        }
        self.theta0 = Some(theta0);
        self.sigma = Some(sigma);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p0(&self) -> usize {
        self.x.ncols()
    }

    /// y − Xθ.
    pub fn residual(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.y - &self.x * theta
    }

    /// The noise ε = y − Xθ₀ when θ₀ is known.
    pub fn noise(&self) -> Option<DVector<f64>> {
        self.theta0.as_ref().map(|t| self.residual(t))
    }
}

fn check_series(series: &[DVector<f64>], d: usize) -> Result<usize> {
    if d == 0 {
        return Err(Error::Dimension("lag order d must be positive".into()));
    }
    if series.len() <= d {
        return Err(Error::Dimension(format!(
            "series of length {} leaves no rows for lag order {d}",
            series.len()
        )));
    }
    let p = series[0].len();
    if p == 0 {
        return Err(Error::Dimension("series vectors are empty".into()));
    }
    if let Some(t) = series.iter().position(|z| z.len() != p) {
        return Err(Error::Dimension(format!("ragged series: z_{} has length {}", t + 1, series[t].len())));
    }
    Ok(p)
}

/// Lagged design of a VAR(d) series: row `t` is `(z_{t+d−1}ᵀ, …, z_tᵀ)`.
/// The design does not depend on the response coordinate, so callers
/// regressing every coordinate should build it once.
pub fn build_ts_design(series: &[DVector<f64>], d: usize) -> Result<DMatrix<f64>> {
    let p = check_series(series, d)?;
    let n = series.len() - d;
    let mut x = DMatrix::zeros(n, d * p);
    for t in 0..n {
        for l in 0..d {
            let z = &series[t + d - 1 - l];
            for j in 0..p {
                x[(t, l * p + j)] = z[j];
            }
        }
    }
    Ok(x)
}

/// Regression view of coordinate `i` of a VAR(d) series: `n = T − d` rows,
/// response `y_t = z_{t+d, i}`.
pub fn build_regression_view(series: &[DVector<f64>], d: usize, i: usize) -> Result<RegressionProblem> {
    let p = check_series(series, d)?;
    if i >= p {
        return Err(Error::Dimension(format!("coordinate {i} out of range for p = {p}")));
    }
    let x = build_ts_design(series, d)?;
    let y = DVector::from_iterator(series.len() - d, series[d..].iter().map(|z| z[i]));
    RegressionProblem::new(x, y, Origin::Ts { coordinate: i })
}

/// Partition of `n` sample indices into consecutive episodes `E_0, …, E_{K−1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSchedule {
    lengths: Vec<usize>,
    beta: f64,
    /// `cumulative[ℓ−1] = n_ℓ = r_0 + … + r_{ℓ−1}` for ℓ = 1..K.
    cumulative: Vec<usize>,
}

impl EpisodeSchedule {
    /// Builds a schedule from explicit episode lengths.
    pub fn from_lengths(lengths: Vec<usize>, beta: f64) -> Result<Self> {
        if lengths.is_empty() || lengths.contains(&0) {
            return Err(Error::Schedule("episode lengths must be non-empty and positive".into()));
        }
        let cumulative = lengths
            .iter()
            .scan(0, |acc, &r| {
                *acc += r;
                Some(*acc)
            })
            .collect();
        Ok(Self { lengths, beta, cumulative })
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn cumulative(&self) -> &[usize] {
        &self.cumulative
    }

    /// Number of episodes K.
    pub fn k(&self) -> usize {
        self.lengths.len()
    }

    pub fn n(&self) -> usize {
        *self.cumulative.last().unwrap_or(&0)
    }

    /// Number of samples before episode `ell` (n_ℓ; zero for ℓ = 0).
    pub fn prefix_len(&self, ell: usize) -> usize {
        if ell == 0 {
            0
        } else {
            self.cumulative[ell - 1]
        }
    }

    /// Row indices of episode `ell`.
    pub fn episode(&self, ell: usize) -> std::ops::Range<usize> {
        self.prefix_len(ell)..self.cumulative[ell]
    }
}

/// Episode schedule with `r_0` leading samples and `⌈β^ℓ⌉` samples in episode
/// ℓ ≥ 1; the final episode takes whatever remains.
pub fn make_schedule(n: usize, r0: usize, beta: f64) -> Result<EpisodeSchedule> {
    if r0 == 0 || r0 >= n {
        return Err(Error::Schedule(format!("need 0 < r0 < n, got r0 = {r0}, n = {n}")));
    }
    if !(beta > 1.0) || !beta.is_finite() {
        return Err(Error::Schedule(format!("growth factor must be > 1, got {beta}")));
    }
    let mut lengths = vec![r0];
    let mut remaining = n - r0;
    let mut ell = 1;
    while remaining > 0 {
        let next = beta.powi(ell).ceil();
        let r = if next >= remaining as f64 { remaining } else { next as usize };
        lengths.push(r);
        remaining -= r;
        ell += 1;
    }
    EpisodeSchedule::from_lengths(lengths, beta)
}

/// Default first-episode length ⌈√n⌉, clamped so at least one episode follows.
pub fn default_r0(n: usize) -> usize {
    ((n as f64).sqrt().ceil() as usize).clamp(1, n.saturating_sub(1).max(1))
}

/// Extreme eigenvalues of `𝒜*(γ)𝒜(γ)` on the unit circle and derived constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub mu_min: f64,
    pub mu_max: f64,
    pub lam_min_noise: f64,
    pub lam_max_noise: f64,
    /// d·λmax(Σ_ζ)·μmax / (λmin(Σ_ζ)·μmin)
    pub omega: f64,
    /// λmin(Σ_ζ) / (2·μmax)
    pub alpha: f64,
    /// d·λmax(Σ_ζ) / μmin
    pub gamma: f64,
    /// False when the grid minimum of μ is not strictly positive.
    pub stable: bool,
}

/// Real `2p × 2p` embedding of `𝒜(e^{jθ}) = I − Σ_ℓ A^(ℓ) e^{jℓθ}`.
pub(crate) fn char_poly_embedding(coeffs: &[DMatrix<f64>], theta: f64) -> DMatrix<f64> {
    let p = coeffs[0].nrows();
    let mut re = DMatrix::identity(p, p);
    let mut im = DMatrix::zeros(p, p);
    for (l, a) in coeffs.iter().enumerate() {
        let angle = (l + 1) as f64 * theta;
        re -= a * angle.cos();
        im -= a * angle.sin();
    }
    let mut e = DMatrix::zeros(2 * p, 2 * p);
    e.view_mut((0, 0), (p, p)).copy_from(&re);
    e.view_mut((p, p), (p, p)).copy_from(&re);
    e.view_mut((0, p), (p, p)).copy_from(&(-&im));
    e.view_mut((p, 0), (p, p)).copy_from(&im);
    e
}

/// Grid evaluation of μ_min/μ_max over `grid_size` equally spaced points on
/// the unit circle, together with the noise-covariance extremes and the
/// derived constants ω, α and γ. An unstable model is reported through
/// `stable = false` rather than an error.
pub fn spectral_params(model: &VarModel, grid_size: usize) -> Result<SpectralSummary> {
    if grid_size < 64 {
        return Err(Error::InvalidArgument(format!("spectral grid needs at least 64 points, got {grid_size}")));
    }
    let mut mu_min = f64::INFINITY;
    let mut mu_max = 0.0_f64;
    for k in 0..grid_size {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / grid_size as f64;
        let e = char_poly_embedding(model.coeffs(), theta);
        // eigenvalues of the embedding of 𝒜*𝒜 are those of 𝒜*𝒜, each twice
        let (lo, hi) = sym_eigen_extremes(&(e.transpose() * &e));
        mu_min = mu_min.min(lo.max(0.0));
        mu_max = mu_max.max(hi);
    }
    let (lam_min_noise, lam_max_noise) = sym_eigen_extremes(model.noise_cov());
    let d = model.d() as f64;
    let stable = mu_min > 1e-12;
    let (omega, gamma) = if stable {
        (
            d * lam_max_noise * mu_max / (lam_min_noise * mu_min),
            d * lam_max_noise / mu_min,
        )
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    Ok(SpectralSummary {
        mu_min,
        mu_max,
        lam_min_noise,
        lam_max_noise,
        omega,
        alpha: lam_min_noise / (2.0 * mu_max),
        gamma,
        stable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_series(values: &[f64]) -> Vec<DVector<f64>> {
        values.iter().map(|&v| DVector::from_element(1, v)).collect()
    }

    #[test]
    fn gelfand_radius_examples() {
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -0.9, 0.9, 0.0]);
        assert!((gelfand_radius(rot) - 0.9).abs() < 1e-9);
        let nil = DMatrix::from_row_slice(3, 3, &[0.0, 5.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0]);
        assert_eq!(gelfand_radius(nil), 0.0);
        let jordan = DMatrix::from_row_slice(2, 2, &[0.7, 3.0, 0.0, 0.7]);
        assert!((gelfand_radius(jordan) - 0.7).abs() < 1e-9);
    }

    #[test]
    fn regression_view_scalar() {
        let prob = build_regression_view(&scalar_series(&[1.0, 2.0, 4.0]), 1, 0).unwrap();
        assert_eq!(prob.x.as_slice(), &[1.0, 2.0]);
        assert_eq!(prob.y.as_slice(), &[2.0, 4.0]);
        assert_eq!(prob.origin, Origin::Ts { coordinate: 0 });
    }

    #[test]
    fn regression_view_stacks_lags_newest_first() {
        let series = vec![
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![3.0, 4.0]),
            DVector::from_vec(vec![5.0, 6.0]),
        ];
        let prob = build_regression_view(&series, 2, 0).unwrap();
        assert_eq!((prob.x.nrows(), prob.x.ncols()), (1, 4));
        assert_eq!(prob.x.row(0).iter().cloned().collect::<Vec<_>>(), vec![3.0, 4.0, 1.0, 2.0]);
        assert_eq!(prob.y.as_slice(), &[5.0]);
    }

    #[test]
    fn regression_view_errors() {
        let series = scalar_series(&[1.0, 2.0]);
        assert!(matches!(build_regression_view(&series, 2, 0), Err(Error::Dimension(_))));
        let ragged = vec![DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![1.0]), DVector::from_vec(vec![1.0, 2.0])];
        assert!(matches!(build_regression_view(&ragged, 1, 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn schedule_examples() {
        let s = make_schedule(47, 6, 1.3).unwrap();
        assert_eq!(s.lengths(), &[6, 2, 2, 3, 3, 4, 5, 7, 9, 6]);
        assert_eq!(s.n(), 47);
        assert_eq!(s.cumulative()[0], 6);
        assert_eq!(s.episode(1), 6..8);
        assert_eq!(make_schedule(10, 9, 2.0).unwrap().lengths(), &[9, 1]);
        assert!(matches!(make_schedule(5, 5, 1.3), Err(Error::Schedule(_))));
        assert!(matches!(make_schedule(5, 2, 1.0), Err(Error::Schedule(_))));
    }

    #[test]
    fn spectral_examples() {
        let noise = DMatrix::identity(3, 3);
        let m = VarModel::new(vec![DMatrix::identity(3, 3) * 0.15], noise.clone()).unwrap();
        let s = spectral_params(&m, 512).unwrap();
        assert!((s.mu_min - 0.7225).abs() < 1e-12);
        assert!((s.mu_max - 1.3225).abs() < 1e-12);
        assert!(s.stable);

        let zero = VarModel::new(vec![DMatrix::zeros(3, 3); 2], noise.clone()).unwrap();
        let s = spectral_params(&zero, 64).unwrap();
        assert!((s.mu_min - 1.0).abs() < 1e-12 && (s.mu_max - 1.0).abs() < 1e-12);
        assert!((s.omega - 2.0).abs() < 1e-12);
        assert!((s.alpha - 0.5).abs() < 1e-12);

        let unit = VarModel::new(vec![DMatrix::identity(3, 3)], noise).unwrap();
        let s = spectral_params(&unit, 512).unwrap();
        assert!(!s.stable);
        assert!(s.mu_min < 1e-12);
        assert!(spectral_params(&unit, 32).is_err());
    }

    #[test]
    fn explosive_models_are_detected_by_companion_radius() {
        let m = VarModel::new(vec![DMatrix::from_element(1, 1, 2.0)], DMatrix::identity(1, 1)).unwrap();
        // the unit-circle condition alone does not see this
        assert!(spectral_params(&m, 64).unwrap().stable);
        assert!(!m.is_stationary());
        let ok = VarModel::new(vec![DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 0.3)], DMatrix::identity(1, 1)).unwrap();
        assert!(ok.is_stationary());
    }

    #[test]
    fn var_model_validation() {
        let bad_cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(VarModel::new(vec![DMatrix::zeros(2, 2)], bad_cov).is_err());
        assert!(VarModel::new(vec![DMatrix::zeros(3, 3)], DMatrix::identity(2, 2)).is_err());
        let m = VarModel::new(
            vec![DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]), DMatrix::from_row_slice(2, 2, &[5.0, 6.0, 7.0, 8.0])],
            DMatrix::identity(2, 2),
        )
        .unwrap();
        assert_eq!(m.theta_for(1).as_slice(), &[3.0, 4.0, 7.0, 8.0]);
    }
}
