//! Online debiasing for two-batch collection: a non-adaptive first batch and a
//! second batch sampled conditionally on an intermediate estimate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::debias_ts::{DebiasedEstimate, Method};
use crate::decorrelator::{solve_matrix, AdaptiveConfig, DecorrelatorMatrix};
use crate::linalg::gram_rows;
use crate::model::{Origin, RegressionProblem};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchDesign {
    pub x1: DMatrix<f64>,
    pub x2: DMatrix<f64>,
    pub y1: DVector<f64>,
    pub y2: DVector<f64>,
    /// Intermediate estimate θ̂¹ fitted on batch 1.
    pub theta_int: DVector<f64>,
    /// Selection threshold ς̄ in standard-deviation units; −∞ for none.
    pub varsigma_bar: f64,
}

impl BatchDesign {
    pub fn new(
        x1: DMatrix<f64>,
        y1: DVector<f64>,
        x2: DMatrix<f64>,
        y2: DVector<f64>,
        theta_int: DVector<f64>,
        varsigma_bar: f64,
    ) -> Result<Self> {
        let p = x1.ncols();
        if x2.ncols() != p || theta_int.len() != p {
            return Err(Error::Dimension("batch designs and intermediate estimate disagree on p".into()));
        }
        if x1.nrows() != y1.len() || x2.nrows() != y2.len() {
            return Err(Error::Dimension("batch design rows do not match responses".into()));
        }
        if x1.nrows() == 0 {
            return Err(Error::Dimension("first batch is empty".into()));
        }
        Ok(Self { x1, x2, y1, y2, theta_int, varsigma_bar })
    }

    pub fn n1(&self) -> usize {
        self.x1.nrows()
    }

    pub fn n2(&self) -> usize {
        self.x2.nrows()
    }

    pub fn n(&self) -> usize {
        self.n1() + self.n2()
    }

    pub fn p(&self) -> usize {
        self.x1.ncols()
    }

    /// Both batches stacked into one regression problem.
    pub fn stacked(&self) -> Result<RegressionProblem> {
        let (n1, n2, p) = (self.n1(), self.n2(), self.p());
        let mut x = DMatrix::zeros(n1 + n2, p);
        x.rows_mut(0, n1).copy_from(&self.x1);
        x.rows_mut(n1, n2).copy_from(&self.x2);
        let y = DVector::from_iterator(n1 + n2, self.y1.iter().chain(self.y2.iter()).cloned());
        RegressionProblem::new(x, y, Origin::Batch { n1, n2 })
    }

    fn sigma1(&self) -> DMatrix<f64> {
        gram_rows(&self.x1, 0..self.n1())
    }

    fn sigma2(&self) -> DMatrix<f64> {
        gram_rows(&self.x2, 0..self.n2())
    }
}

/// `M1` from batch 1 and `M2` from the batch-2 covariance, each with μ scaled
/// to its own batch size.
pub fn build_batch_m(
    design: &BatchDesign,
    config: &AdaptiveConfig,
    rows: &[usize],
) -> Result<(DecorrelatorMatrix, DecorrelatorMatrix)> {
    let s1 = design.sigma1();
    let m1 = solve_matrix(&s1, rows, &config.resolve(&s1, design.n1())?, None)?;
    if design.n2() == 0 {
        return Ok((m1, DecorrelatorMatrix::zeros(design.p(), rows.to_vec())));
    }
    let s2 = design.sigma2();
    let m2 = solve_matrix(&s2, rows, &config.resolve(&s2, design.n2())?, Some(&m1.m))?;
    Ok((m1, m2))
}

fn check_m(design: &BatchDesign, m: &DecorrelatorMatrix) -> Result<()> {
    if m.m.nrows() != design.p() || m.m.ncols() != design.p() {
        return Err(Error::Dimension(format!("decorrelator is {}x{}, expected p = {}", m.m.nrows(), m.m.ncols(), design.p())));
    }
    Ok(())
}

/// V_a = σ²((n1/n)⟨m1, Σ̂1 m1⟩ + (n2/n)⟨m2, Σ̂2 m2⟩).
pub fn conditional_variance_batch(
    m1: &DecorrelatorMatrix,
    m2: &DecorrelatorMatrix,
    design: &BatchDesign,
    sigma: f64,
) -> Result<DVector<f64>> {
    check_m(design, m1)?;
    check_m(design, m2)?;
    let n = design.n() as f64;
    // ⟨m_a, Σ̂ m_a⟩ = ‖X m_a‖²/n_b
    let p1 = &design.x1 * m1.m.transpose();
    let p2 = &design.x2 * m2.m.transpose();
    Ok(DVector::from_fn(design.p(), |a, _| {
        sigma * sigma * (p1.column(a).norm_squared() + p2.column(a).norm_squared()) / n
    }))
}

/// θ^on = θ^L + (1/n)M1X1ᵀ(y1 − X1θ^L) + (1/n)M2X2ᵀ(y2 − X2θ^L).
/// `theta0`, when given, yields the noise component W_n.
pub fn online_debias_batch(
    theta_lasso: &DVector<f64>,
    design: &BatchDesign,
    m1: &DecorrelatorMatrix,
    m2: &DecorrelatorMatrix,
    sigma: f64,
    theta0: Option<&DVector<f64>>,
) -> Result<DebiasedEstimate> {
    check_m(design, m1)?;
    check_m(design, m2)?;
    let p = design.p();
    if theta_lasso.len() != p {
        return Err(Error::Dimension("estimate length does not match design".into()));
    }
    let n = design.n() as f64;
    let r1 = &design.y1 - &design.x1 * theta_lasso;
    let r2 = &design.y2 - &design.x2 * theta_lasso;
    let mut theta = theta_lasso.clone();
    if r1.iter().chain(r2.iter()).any(|r| *r != 0.0) {
        theta += (&m1.m * design.x1.tr_mul(&r1) + &m2.m * design.x2.tr_mul(&r2)) / n;
    }
    let noise = theta0.map(|t0| {
        let e1 = &design.y1 - &design.x1 * t0;
        let e2 = &design.y2 - &design.x2 * t0;
        (&m1.m * design.x1.tr_mul(&e1) + &m2.m * design.x2.tr_mul(&e2)) / n.sqrt()
    });
    let acc = (&m1.m * design.x1.tr_mul(&design.x1) + &m2.m * design.x2.tr_mul(&design.x2)) / n;
    let bias_matrix_norm = m1
        .rows
        .iter()
        .flat_map(|&a| (0..p).map(move |j| (a, j)))
        .map(|(a, j)| (n.sqrt() * ((a == j) as u8 as f64 - acc[(a, j)])).abs())
        .fold(0.0, f64::max);
    Ok(DebiasedEstimate {
        theta,
        variance: conditional_variance_batch(m1, m2, design, sigma)?,
        noise,
        bias_matrix_norm,
        method: Method::OnlineBatch,
        n: design.n(),
        sigma,
        covariance: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::spd_inverse;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn design(n1: usize, n2: usize, p: usize, seed: u64) -> BatchDesign {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = |r, c| DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x1 = g(n1, p);
        let x2 = g(n2, p);
        let y1 = g(n1, 1).column(0).into_owned();
        let y2 = g(n2, 1).column(0).into_owned();
        BatchDesign::new(x1, y1, x2, y2, DVector::zeros(p), 0.0).unwrap()
    }

    #[test]
    fn zero_residual_returns_lasso() {
        let mut d = design(20, 20, 3, 1);
        let theta = DVector::from_vec(vec![0.2, -0.4, 0.0]);
        d.y1 = &d.x1 * &theta;
        d.y2 = &d.x2 * &theta;
        let (m1, m2) = build_batch_m(&d, &AdaptiveConfig::default(), &[0, 1, 2]).unwrap();
        let est = online_debias_batch(&theta, &d, &m1, &m2, 1.0, None).unwrap();
        assert_eq!(est.theta, theta);
    }

    #[test]
    fn zero_first_decorrelator_is_sample_splitting() {
        let d = design(15, 25, 3, 2);
        let theta = DVector::from_vec(vec![0.1, 0.0, 0.3]);
        let m1 = DecorrelatorMatrix::from_matrix(DMatrix::zeros(3, 3));
        let m2 = DecorrelatorMatrix::from_matrix(DMatrix::identity(3, 3) * 0.7);
        let est = online_debias_batch(&theta, &d, &m1, &m2, 1.0, None).unwrap();
        let expected = &theta + &m2.m * d.x2.tr_mul(&(&d.y2 - &d.x2 * &theta)) / 40.0;
        assert!((est.theta - expected).amax() < 1e-14);
    }

    #[test]
    fn single_batch_with_inverse_is_ols() {
        let d = design(30, 0, 4, 3);
        let inv = spd_inverse(&(d.x1.tr_mul(&d.x1) / 30.0)).unwrap();
        let m1 = DecorrelatorMatrix::from_matrix(inv);
        let m2 = DecorrelatorMatrix::from_matrix(DMatrix::zeros(4, 4));
        let theta_l = DVector::from_vec(vec![0.5, 0.0, 0.0, -0.1]);
        let est = online_debias_batch(&theta_l, &d, &m1, &m2, 1.0, None).unwrap();
        let ols = d.x1.clone().svd(true, true).solve(&d.y1, 1e-14).unwrap();
        assert!((est.theta - ols).amax() < 1e-8);
    }

    #[test]
    fn variance_examples() {
        let d = design(10, 10, 2, 4);
        let z = DecorrelatorMatrix::from_matrix(DMatrix::zeros(2, 2));
        assert!(conditional_variance_batch(&z, &z, &d, 1.0).unwrap().iter().all(|v| *v == 0.0));
        // batch covariances equal to I
        let x = DMatrix::from_row_slice(2, 2, &[2f64.sqrt(), 0.0, 0.0, 2f64.sqrt()]);
        let d = BatchDesign::new(x.clone(), DVector::zeros(2), x, DVector::zeros(2), DVector::zeros(2), 0.0).unwrap();
        let id = DecorrelatorMatrix::from_matrix(DMatrix::identity(2, 2));
        let v = conditional_variance_batch(&id, &id, &d, 1.5).unwrap();
        assert!((v[0] - 2.25).abs() < 1e-14 && (v[1] - 2.25).abs() < 1e-14);
    }

    #[test]
    fn first_decorrelator_ignores_second_batch() {
        let d = design(40, 30, 5, 5);
        let mut e = d.clone();
        e.x2 *= 3.0;
        let rows: Vec<usize> = (0..5).collect();
        let (a, _) = build_batch_m(&d, &AdaptiveConfig::default(), &rows).unwrap();
        let (b, _) = build_batch_m(&e, &AdaptiveConfig::default(), &rows).unwrap();
        assert_eq!(a.m, b.m);
    }

    #[test]
    fn shape_errors() {
        let d = design(5, 5, 2, 6);
        let bad = DecorrelatorMatrix::from_matrix(DMatrix::zeros(3, 3));
        assert!(conditional_variance_batch(&bad, &bad, &d, 1.0).is_err());
        assert!(BatchDesign::new(DMatrix::zeros(2, 2), DVector::zeros(3), DMatrix::zeros(1, 2), DVector::zeros(1), DVector::zeros(2), 0.0).is_err());
    }
}
