//! Standard normal quantile function.

use crate::error::{Result, UqError};

// Rational approximation coefficients (P. J. Acklam), relative error ~1.15e-9.
const A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.38357751867269e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];
const P_LOW: f64 = 0.02425;

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `Phi^{-1}(p)` for `p` in `(0, 1)`, accurate to better than `1e-9`.
///
/// Computed on the lower half only; the upper half uses `Phi^{-1}(p) =
/// -Phi^{-1}(1 - p)`, which is exact in floating point for `p >= 0.5`.
pub fn inverse_normal_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(UqError::Input(format!("inverse normal CDF needs p in (0, 1), got {p}")));
    }
    if p > 0.5 {
        return Ok(-lower_half(1.0 - p));
    }
    Ok(lower_half(p))
}

fn lower_half(p: f64) -> f64 {
    if p == 0.5 {
        return 0.0;
    }
    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    // One Newton step on Phi(x) - p.
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    x - (normal_cdf(x) - p) / pdf
}

#[cfg(test)]
mod tests {
    use super::*;

    /// CDF by composite Simpson integration of the density from 0 to `x`.
    fn cdf_by_quadrature(x: f64) -> f64 {
        let n = 20_000;
        let h = x / n as f64;
        let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = f(0.0) + f(x);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(i as f64 * h);
        }
        0.5 + s * h / 3.0
    }

    fn quantile_by_bisection(p: f64) -> f64 {
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cdf_by_quadrature(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn median_is_zero() {
        assert_eq!(inverse_normal_cdf(0.5).unwrap(), 0.0);
    }

    #[test]
    fn upper_quantile_matches_quadrature_oracle() {
        let oracle = quantile_by_bisection(0.975);
        assert!((oracle - 1.959964).abs() < 1e-6);
        let z = inverse_normal_cdf(0.975).unwrap();
        assert!((z - oracle).abs() < 1e-9, "{z} vs {oracle}");
    }

    #[test]
    fn matches_oracle_across_range() {
        for &p in &[1e-6, 1e-3, 0.01, 0.02425, 0.1, 0.3, 0.45, 0.6, 0.9, 0.99, 0.999] {
            let z = inverse_normal_cdf(p).unwrap();
            let oracle = quantile_by_bisection(p);
            assert!((z - oracle).abs() < 1e-9, "p={p}: {z} vs {oracle}");
        }
    }

    #[test]
    fn antisymmetric() {
        for k in 1..1024 {
            let p = k as f64 / 1024.0;
            assert_eq!(inverse_normal_cdf(p).unwrap(), -inverse_normal_cdf(1.0 - p).unwrap());
        }
    }

    #[test]
    fn rejects_out_of_range() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(inverse_normal_cdf(p).is_err());
        }
    }
}
