//! Reference computations shared by the integration tests. Everything here is
//! deliberately naive: dense matrices and brute-force integration.

#![allow(dead_code)]

use chronoskill::{Likelihood, Outcome};

/// Step count of the trapezoid rule over `z ∈ [−12, 12]`.
const GRID: usize = 6001;

fn trapezoid_logs(terms: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = terms.collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = v
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let w = if i == 0 || i + 1 == v.len() { 0.5 } else { 1.0 };
            w * (x - max).exp()
        })
        .sum();
    max + s.ln()
}

fn z_grid() -> impl Iterator<Item = (f64, f64)> {
    let h = 24.0 / (GRID - 1) as f64;
    (0..GRID).map(move |i| {
        let z = -12.0 + h * i as f64;
        (z, h)
    })
}

/// `log ∫ p(y | μ + σ z) φ(z) dz` by trapezoid.
pub fn log_partition(lik: &Likelihood, y: Outcome, mean: f64, var: f64) -> f64 {
    let sd = var.sqrt();
    trapezoid_logs(z_grid().map(|(z, h)| {
        let lp = lik.log_pdf(y, mean + sd * z).unwrap();
        lp - 0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln() + h.ln()
    }))
}

/// `∫ log p(y | μ + σ z) φ(z) dz` by trapezoid.
pub fn expected_log_lik(lik: &Likelihood, y: Outcome, mean: f64, var: f64) -> f64 {
    let sd = var.sqrt();
    let pts: Vec<(f64, f64)> = z_grid().collect();
    let n = pts.len();
    pts.iter()
        .enumerate()
        .map(|(i, &(z, h))| {
            let w = if i == 0 || i + 1 == n { 0.5 } else { 1.0 };
            let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
            w * h * phi * lik.log_pdf(y, mean + sd * z).unwrap()
        })
        .sum()
}

/// Central differences `(f', f'')` at `x` with step `h`.
pub fn central<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> (f64, f64) {
    let (fp, f0, fm) = (f(x + h), f(x), f(x - h));
    ((fp - fm) / (2.0 * h), (fp - 2.0 * f0 + fm) / (h * h))
}

/// Kendall rank correlation (tau-a) between two equally long samples.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += ((a[i] - a[j]) * (b[i] - b[j])).signum();
        }
    }
    s / (n * (n - 1) / 2) as f64
}
