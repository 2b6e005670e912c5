//! Standard normal density, distribution and quantile functions.
//!
//! Tails are evaluated through `erfc` directly so that upper-tail
//! probabilities keep full relative precision far from the origin.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Density φ(x).
pub fn pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Distribution function Φ(x).
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail 1 − Φ(x), accurate for large positive `x`.
pub fn sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// Quantile Φ⁻¹(p). Returns ±∞ at the endpoints and NaN outside [0, 1].
pub fn quantile(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    // work in the lower tail, where p has full relative precision
    let (q, sign) = if p > 0.5 { (1.0 - p, 1.0) } else { (p, -1.0) };
    let mut x = -SQRT_2 * erfc_inv(2.0 * q);
    if x.is_finite() {
        // one Halley step against the accurate erfc
        let e = (cdf(x) - q) / pdf(x);
        x -= e / (1.0 + 0.5 * x * e);
    }
    sign * -x
}

/// Upper quantile z with 1 − Φ(z) = q, i.e. −Φ⁻¹(q).
pub fn upper_quantile(q: f64) -> f64 {
    -quantile(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert!((cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
        assert!((upper_quantile(0.025) - 1.959_963_984_540_054).abs() < 1e-12);
        assert!((quantile(0.84) - 0.994_457_883_209_753).abs() < 1e-12);
        assert!((pdf(1.0) - 0.241_970_724_519_143_37).abs() < 1e-15);
        assert!((cdf(-1.0) - 0.158_655_253_931_457_05).abs() < 1e-15);
        let tail = sf(10.0);
        assert!((tail / 7.619_853_024_160_527e-24 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for k in 1..200 {
            let p = k as f64 / 200.0;
            assert!((cdf(quantile(p)) - p).abs() < 1e-13, "p = {p}");
        }
        for &p in &[1e-12, 1e-8, 1e-4] {
            assert!((cdf(quantile(p)) / p - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn endpoints() {
        assert_eq!(quantile(0.0), f64::NEG_INFINITY);
        assert_eq!(quantile(1.0), f64::INFINITY);
        assert!(quantile(1.5).is_nan());
    }
}
