//! Scalar special functions for the standard normal distribution.

use std::f64::consts::{PI, SQRT_2};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn norm_logpdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * LN_2PI
}

/// Standard normal CDF, accurate in the lower tail.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

// Below this point `erfc` underflows; switch to the asymptotic series.
const TAIL: f64 = -35.0;

/// `log Φ(x)` without underflow for very negative arguments.
pub fn norm_logcdf(x: f64) -> f64 {
    if x > TAIL {
        norm_cdf(x).ln()
    } else {
        norm_logpdf(x) - (-x).ln() + tail_series(x).ln()
    }
}

/// Inverse Mills ratio `φ(x) / Φ(x)`.
pub fn mills(x: f64) -> f64 {
    if x > TAIL {
        norm_pdf(x) / norm_cdf(x)
    } else {
        -x / tail_series(x)
    }
}

// Φ(x) ≈ φ(x)/|x| · (1 − 1/x² + 3/x⁴ − 15/x⁶ + 105/x⁸)
fn tail_series(x: f64) -> f64 {
    let r = 1.0 / (x * x);
    1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r)))
}

/// `log(Φ(b) − Φ(a))` for `a < b`, stable in both tails.
pub fn log_norm_cdf_diff(a: f64, b: f64) -> f64 {
    debug_assert!(a <= b);
    if a >= 0.0 {
        // Φ(b) − Φ(a) = Φ(−a) − Φ(−b)
        let la = norm_logcdf(-a);
        let lb = norm_logcdf(-b);
        la + (-(lb - la).exp()).ln_1p()
    } else {
        let lb = norm_logcdf(b);
        let la = norm_logcdf(a);
        lb + (-(la - lb).exp()).ln_1p()
    }
}

/// `log σ(x)` for the logistic sigmoid.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(σ(b) − σ(a))` for `a < b`.
pub fn log_sigmoid_diff(a: f64, b: f64) -> f64 {
    debug_assert!(a <= b);
    // σ(b) − σ(a) = σ(b)σ(−a)(1 − e^{a−b})
    log_sigmoid(b) + log_sigmoid(-a) + (-(a - b).exp()).ln_1p()
}

/// `log n!` via `ln Γ(n + 1)`.
pub fn ln_factorial(n: f64) -> f64 {
    libm::lgamma(n + 1.0)
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_reference_values() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((norm_cdf(1.96) - 0.975_002_104_851_780_1).abs() < 1e-14);
        assert!((norm_cdf(-3.0) - 0.001_349_898_031_630_094_6).abs() < 1e-17);
    }

    #[test]
    fn logcdf_is_continuous_across_tail_switch() {
        let lo = norm_logcdf(TAIL - 1e-9);
        let hi = norm_logcdf(TAIL + 1e-9);
        assert!((lo - hi).abs() < 1e-9 * lo.abs());
        let m_lo = mills(TAIL - 1e-9);
        let m_hi = mills(TAIL + 1e-9);
        assert!((m_lo - m_hi).abs() < 1e-9 * m_lo);
    }

    #[test]
    fn mills_far_tail_is_finite() {
        let m = mills(-1e4);
        assert!((m - 1e4).abs() / 1e4 < 1e-6);
        assert!(norm_logcdf(-1e4).is_finite());
        assert!((mills(40.0)).abs() < 1e-300);
    }

    #[test]
    fn cdf_difference_matches_direct() {
        for &(a, b) in &[(-1.0, 0.5), (0.2, 0.9), (-3.0, -2.0), (2.0, 3.5)] {
            let direct = (norm_cdf(b) - norm_cdf(a)).ln();
            assert!((log_norm_cdf_diff(a, b) - direct).abs() < 1e-12);
        }
        // far tails stay finite
        assert!(log_norm_cdf_diff(40.0, 41.0).is_finite());
        assert!(log_norm_cdf_diff(-41.0, -40.0).is_finite());
    }

    #[test]
    fn sigmoid_helpers() {
        assert!((log_sigmoid(0.0) - 0.5f64.ln()).abs() < 1e-15);
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-12);
        let d = log_sigmoid_diff(-0.3, 0.4);
        assert!((d - (sigmoid(0.4) - sigmoid(-0.3)).ln()).abs() < 1e-14);
    }

    #[test]
    fn factorial() {
        assert!((ln_factorial(5.0) - 120f64.ln()).abs() < 1e-12);
        assert_eq!(ln_factorial(0.0), 0.0);
    }
}
