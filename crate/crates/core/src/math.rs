//! Scalar math helpers shared across the crate.
//!
//! All transcendental functions go through `libm` so the crate builds without
//! `std`. The few compound helpers here (softplus, log-sum-exp) use the usual
//! overflow-safe forms.

pub use libm::{cos, cosh, exp, expm1, fabs, floor, log, log1p, pow, sin, sinh, sqrt, tanh};

pub const LN_2PI: f64 = 1.837_877_066_409_345_6;

#[inline]
pub fn lgamma(x: f64) -> f64 {
    libm::lgamma_r(x).0
}

/// log(1 + e^x) without overflow for large |x|.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + log1p(exp(-x))
    } else {
        log1p(exp(x))
    }
}

/// Derivative of softplus, i.e. the logistic function.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// log(e^a + e^b) without overflow.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + log1p(exp(lo - hi))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    sqrt(dot(a, a))
}

/// y += s * x
#[inline]
pub fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for i in -40..=40 {
            let x = i as f64 * 0.5;
            let naive = (1.0 + x.exp()).ln();
            assert!((softplus(x) - naive).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn softplus_large_arguments() {
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
        assert!(softplus(-800.0) < 1e-300);
    }

    #[test]
    fn logistic_is_softplus_derivative() {
        for i in -20..=20 {
            let x = i as f64 * 0.7;
            let h = 1e-6;
            let fd = (softplus(x + h) - softplus(x - h)) / (2.0 * h);
            assert!((logistic(x) - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn log_add_exp_handles_spread() {
        assert!((log_add_exp(0.0, 0.0) - core::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 3.0), 3.0);
        assert!((log_add_exp(1000.0, 0.0) - 1000.0).abs() < 1e-12);
    }

    #[test]
    fn lgamma_known_values() {
        assert!((lgamma(1.0)).abs() < 1e-14);
        assert!((lgamma(0.5) - 0.5 * core::f64::consts::PI.ln()).abs() < 1e-14);
        assert!((lgamma(5.0) - 24f64.ln()).abs() < 1e-12);
    }
}
