//! Confidence intervals, p-values, group regions and Benjamini–Yekutieli
//! selection for any [`DebiasedEstimate`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::debias_ts::DebiasedEstimate;
use crate::linalg::sym_sqrt_pair;
use crate::normal::{sf, upper_quantile};
use crate::{Error, Result};

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    Ok(())
}

fn check_coord(est: &DebiasedEstimate, a: usize) -> Result<()> {
    if a >= est.p0() {
        return Err(Error::Dimension(format!("coordinate {a} out of range for p0 = {}", est.p0())));
    }
    Ok(())
}

/// Half-width Φ⁻¹(1 − α/2)·√(V/n).
pub fn half_width(variance: f64, n: usize, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(upper_quantile(alpha / 2.0) * (variance / n as f64).sqrt())
}

/// θ̂_a ± Φ⁻¹(1 − α/2)·√(V_a/n).
pub fn confidence_interval(est: &DebiasedEstimate, a: usize, alpha: f64) -> Result<(f64, f64)> {
    check_coord(est, a)?;
    let h = half_width(est.variance[a], est.n, alpha)?;
    Ok((est.theta[a] - h, est.theta[a] + h))
}

/// Two-sided p-value 2(1 − Φ(√n|θ̂|/√V)) from an estimate, variance and n.
pub fn two_sided_p(theta: f64, variance: f64, n: usize) -> f64 {
    if variance <= 0.0 {
        return if theta == 0.0 { 1.0 } else { 0.0 };
    }
    let z = (n as f64).sqrt() * theta.abs() / variance.sqrt();
    (2.0 * sf(z)).min(1.0)
}

/// Two-sided p-value for H₀: θ₀,a = 0.
pub fn p_value(est: &DebiasedEstimate, a: usize) -> Result<f64> {
    check_coord(est, a)?;
    Ok(two_sided_p(est.theta[a], est.variance[a], est.n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinateInference {
    pub a: usize,
    pub estimate: f64,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub alpha: f64,
    pub coordinates: Vec<CoordinateInference>,
    /// Coordinates selected by Benjamini–Yekutieli, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub by_selected: Option<Vec<usize>>,
}

/// Per-coordinate intervals and tests at level α for the listed coordinates.
pub fn infer(est: &DebiasedEstimate, coords: &[usize], alpha: f64) -> Result<InferenceReport> {
    check_alpha(alpha)?;
    let coordinates = coords
        .iter()
        .map(|&a| {
            let (ci_low, ci_high) = confidence_interval(est, a, alpha)?;
            let p = p_value(est, a)?;
            Ok(CoordinateInference {
                a,
                estimate: est.theta[a],
                variance: est.variance[a],
                ci_low,
                ci_high,
                p_value: p,
                reject: p <= alpha,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InferenceReport { alpha, coordinates, by_selected: None })
}

/// Joint region for a fixed coordinate group, built from the group block of
/// the conditional covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRegion {
    pub coords: Vec<usize>,
    center: DVector<f64>,
    inv_sqrt: DMatrix<f64>,
    n: usize,
}

impl GroupRegion {
    /// `v_g` is the |G|×|G| block V_{n,G}.
    pub fn new(est: &DebiasedEstimate, coords: &[usize], v_g: &DMatrix<f64>) -> Result<Self> {
        let k = coords.len();
        if k == 0 || v_g.nrows() != k || v_g.ncols() != k {
            return Err(Error::Dimension(format!("group of size {k} needs a {k}x{k} covariance block")));
        }
        for &a in coords {
            check_coord(est, a)?;
        }
        let (_, inv_sqrt) = sym_sqrt_pair(v_g)?;
        let center = DVector::from_iterator(k, coords.iter().map(|&a| est.theta[a]));
        Ok(Self { coords: coords.to_vec(), center, inv_sqrt, n: est.n })
    }

    /// Uses the estimate's stored full covariance.
    pub fn from_estimate(est: &DebiasedEstimate, coords: &[usize]) -> Result<Self> {
        let cov = est
            .covariance
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("estimate carries no covariance matrix".into()))?;
        let v_g = DMatrix::from_fn(coords.len(), coords.len(), |i, j| cov[(coords[i], coords[j])]);
        Self::new(est, coords, &v_g)
    }

    /// √n·V_G^{−1/2}(point − θ̂_G).
    pub fn whiten(&self, point: &DVector<f64>) -> Result<DVector<f64>> {
        if point.len() != self.center.len() {
            return Err(Error::Dimension("point length does not match the group".into()));
        }
        Ok(&self.inv_sqrt * (point - &self.center) * (self.n as f64).sqrt())
    }

    /// Per-axis bound z with Π P(|u_i| ≤ z) = 1 − α.
    pub fn axis_bound(&self, alpha: f64) -> Result<f64> {
        check_alpha(alpha)?;
        let k = self.center.len() as f64;
        let per_axis = 1.0 - (1.0 - alpha).powf(1.0 / k);
        Ok(upper_quantile(per_axis / 2.0))
    }

    /// Membership in the axis-aligned whitened region of mass 1 − α.
    pub fn contains(&self, point: &DVector<f64>, alpha: f64) -> Result<bool> {
        let z = self.axis_bound(alpha)?;
        Ok(self.whiten(point)?.iter().all(|u| u.abs() <= z))
    }
}

/// Benjamini–Yekutieli step-up selection. Returns the indices of rejected
/// hypotheses in increasing order.
pub fn benjamini_yekutieli(p_values: &[f64], alpha: f64) -> Vec<usize> {
    let m = p_values.len();
    if m == 0 {
        return Vec::new();
    }
    let c_m: f64 = (1..=m).map(|j| 1.0 / j as f64).sum();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]));
    let cutoff = (1..=m)
        .rev()
        .find(|&i| p_values[order[i - 1]] <= i as f64 * alpha / (m as f64 * c_m))
        .unwrap_or(0);
    let mut selected: Vec<usize> = order[..cutoff].to_vec();
    selected.sort_unstable();
    selected
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::debias_ts::Method;
    use proptest::prelude::*;

    fn estimate(theta: Vec<f64>, variance: Vec<f64>, n: usize) -> DebiasedEstimate {
        DebiasedEstimate {
            theta: DVector::from_vec(theta),
            variance: DVector::from_vec(variance),
            noise: None,
            bias_matrix_norm: 0.0,
            method: Method::Offline,
            n,
            sigma: 1.0,
            covariance: None,
        }
    }

    #[test]
    fn interval_examples() {
        let est = estimate(vec![0.0, 2.0, 0.5], vec![1.0, 0.0, 1.0], 100);
        let (lo, hi) = confidence_interval(&est, 0, 0.05).unwrap();
        assert!((hi - 0.195_996_398_454_005_4).abs() < 1e-12 && (lo + hi).abs() < 1e-15);
        assert_eq!(confidence_interval(&est, 1, 0.05).unwrap(), (2.0, 2.0));
        let est = estimate(vec![3.0], vec![10.0], 10);
        let (lo, hi) = confidence_interval(&est, 0, 0.32).unwrap();
        assert!((hi - 3.0 - 0.994_457_883_209_753).abs() < 1e-12 && (3.0 - lo - 0.994_457_883_209_753).abs() < 1e-12);
        assert_eq!(confidence_interval(&est, 0, 1.0).unwrap(), (3.0, 3.0));
        assert!(confidence_interval(&est, 0, 0.0).is_err());
        assert!(confidence_interval(&est, 1, 0.1).is_err());
    }

    #[test]
    fn p_value_examples() {
        assert_eq!(two_sided_p(0.0, 1.0, 1), 1.0);
        assert!((two_sided_p(1.959_963_984_540_054, 1.0, 1) - 0.05).abs() < 1e-12);
        assert!(two_sided_p(10.0, 1.0, 1) < 1e-20);
        assert_eq!(two_sided_p(0.3, 0.0, 5), 0.0);
        assert_eq!(two_sided_p(0.0, 0.0, 5), 1.0);
    }

    #[test]
    fn by_examples() {
        assert_eq!(benjamini_yekutieli(&[0.001, 0.02, 0.03, 0.5], 0.05), vec![0]);
        assert!(benjamini_yekutieli(&[1.0; 5], 0.05).is_empty());
        assert_eq!(benjamini_yekutieli(&[0.0; 4], 0.05), vec![0, 1, 2, 3]);
        // step-up: a large p in the middle does not stop later rejections
        assert_eq!(benjamini_yekutieli(&[0.5, 0.0001, 0.0002], 0.05), vec![1, 2]);
    }

    #[test]
    fn group_examples() {
        let est = estimate(vec![0.0, 0.0, 1.0], vec![4.0, 9.0, 1.0], 1);
        let v = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let g = GroupRegion::new(&est, &[0, 1], &v).unwrap();
        let w = g.whiten(&DVector::from_vec(vec![2.0, 3.0])).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-12 && (w[1] - 1.0).abs() < 1e-12);
        assert_eq!(g.whiten(&DVector::zeros(2)).unwrap(), DVector::zeros(2));
        assert!(GroupRegion::new(&est, &[0, 1], &DMatrix::zeros(2, 2)).is_err());

        // a singleton group is the scalar interval
        let single = GroupRegion::new(&est, &[2], &DMatrix::from_element(1, 1, 1.0)).unwrap();
        let (lo, hi) = confidence_interval(&est, 2, 0.1).unwrap();
        for point in [lo - 1e-9, lo + 1e-9, hi - 1e-9, hi + 1e-9] {
            let inside = point >= lo && point <= hi;
            assert_eq!(single.contains(&DVector::from_element(1, point), 0.1).unwrap(), inside);
        }
    }

    proptest! {
        #[test]
        fn ci_p_duality(theta in -3.0f64..3.0, var in 0.01f64..5.0, n in 1usize..500) {
            let est = estimate(vec![theta], vec![var], n);
            for k in 1..=20 {
                let alpha = k as f64 * 0.0475;
                let (lo, hi) = confidence_interval(&est, 0, alpha).unwrap();
                let excludes_zero = lo > 0.0 || hi < 0.0;
                prop_assert_eq!(p_value(&est, 0).unwrap() <= alpha, excludes_zero);
            }
        }

        #[test]
        fn by_monotone_in_alpha(ps in proptest::collection::vec(0.0f64..1.0, 1..30), a in 0.001f64..0.5) {
            let small = benjamini_yekutieli(&ps, a);
            let large = benjamini_yekutieli(&ps, (a * 1.7).min(0.99));
            prop_assert!(small.iter().all(|i| large.contains(i)));
        }
    }
}
