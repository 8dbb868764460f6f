//! Gauss–Hermite quadrature for Gaussian expectations.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Mutex, OnceLock};

/// Default node count for likelihood integrals.
pub const DEFAULT_NODES: usize = 32;

/// Largest order the recurrence evaluates without overflow.
pub const MAX_NODES: usize = 128;

/// Nodes and weights for `∫ f(x) exp(−x²) dx`, with weights pre-divided by √π
/// so that they integrate against the standard normal after the `√2` rescale.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        assert!(
            (1..=MAX_NODES).contains(&n),
            "Gauss-Hermite order must be in 1..={MAX_NODES}, got {n}"
        );
        let (nodes, weights) = hermite_rule(n);
        let weights = weights.into_iter().map(|w| w / PI.sqrt()).collect();
        Self { nodes, weights }
    }

    /// Shared, lazily built rule of order `n`.
    pub fn cached(n: usize) -> &'static GaussHermite {
        static CACHE: OnceLock<Mutex<HashMap<usize, &'static GaussHermite>>> = OnceLock::new();
        let mut map = CACHE
            .get_or_init(|| Mutex::new(HashMap::new()))
            .lock()
            .expect("quadrature cache poisoned");
        map.entry(n)
            .or_insert_with(|| Box::leak(Box::new(GaussHermite::new(n))))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Points `u_i` and normalized weights for `E[f(u)]`, `u ~ N(mean, var)`.
    pub fn points(&self, mean: f64, var: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let scale = (2.0 * var).sqrt();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mean + scale * x, w))
    }

    /// `E[f(u)]` for `u ~ N(mean, var)`.
    pub fn expect<F: FnMut(f64) -> f64>(&self, mean: f64, var: f64, mut f: F) -> f64 {
        self.points(mean, var).map(|(u, w)| w * f(u)).sum()
    }
}

// Newton iteration on orthonormal Hermite polynomials, seeded by the
// classical asymptotic root estimates.
fn hermite_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    // ascending order
    x.reverse();
    w.reverse();
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_one() {
        for n in [1, 2, 5, 20, 32, 64, 100] {
            let gh = GaussHermite::new(n);
            let s: f64 = gh.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-13, "n={n} sum={s}");
        }
    }

    #[test]
    fn gaussian_moments_exact() {
        let gh = GaussHermite::new(32);
        let (m, v) = (0.7, 2.5);
        let mean = gh.expect(m, v, |u| u);
        let second = gh.expect(m, v, |u| (u - m).powi(2));
        let fourth = gh.expect(m, v, |u| (u - m).powi(4));
        assert!((mean - m).abs() < 1e-13);
        assert!((second - v).abs() < 1e-12);
        assert!((fourth - 3.0 * v * v).abs() < 1e-10);
    }

    #[test]
    fn lognormal_mean() {
        let gh = GaussHermite::new(32);
        let got = gh.expect(0.3, 0.5, f64::exp);
        assert!((got - (0.3f64 + 0.25).exp()).abs() < 1e-12);
    }

    #[test]
    fn nodes_symmetric_and_sorted() {
        let gh = GaussHermite::cached(31);
        assert!(gh.nodes.windows(2).all(|p| p[0] < p[1]));
        assert!(gh.nodes[15].abs() < 1e-14);
        for i in 0..31 {
            assert!((gh.nodes[i] + gh.nodes[30 - i]).abs() < 1e-12);
        }
    }
}
