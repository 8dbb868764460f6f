use std::sync::Arc;

use thiserror::Error;

use super::linalg::{matmul, matmul_bt, matvec, pinv_psd, quad_form, symmetrize};
use crate::kernels::StateSpace;
use crate::special::LN_2PI;

#[derive(Debug, Error, PartialEq)]
pub enum ChainError {
    #[error("chain times must be nondecreasing: t[{index}] = {next} follows {prev}")]
    Unsorted { index: usize, prev: f64, next: f64 },
    #[error("chain time must be finite (got {0})")]
    NonFiniteTime(f64),
    #[error(
        "pseudo-observation precision must be finite and nonnegative (node {node}, got {beta})"
    )]
    InvalidSite { node: usize, beta: f64 },
    #[error(
        "filter covariance became non-finite at node {node}; hyperparameters are likely divergent"
    )]
    Diverged { node: usize },
    #[error("chain has nodes that were added after the last smoothing pass")]
    Stale,
}

/// Markov chain over one feature's observation times, carrying one Gaussian
/// pseudo-observation per node in natural parameters `(α̃, β̃)`.
#[derive(Debug, Clone)]
pub struct FeatureChain {
    space: Arc<StateSpace>,
    k: usize,
    times: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    // Link i-1 -> i stored at node i; node 0 holds zeros.
    trans: Vec<f64>,
    noise: Vec<f64>,
    pred_mean: Vec<f64>,
    pred_cov: Vec<f64>,
    filt_mean: Vec<f64>,
    filt_cov: Vec<f64>,
    smooth_mean: Vec<f64>,
    smooth_cov: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
    smoothed_len: usize,
    log_partition: f64,
    log_evidence: f64,
    joseph: bool,
}

impl FeatureChain {
    pub fn new(space: Arc<StateSpace>) -> Self {
        let k = space.order();
        Self {
            space,
            k,
            times: Vec::new(),
            alpha: Vec::new(),
            beta: Vec::new(),
            trans: Vec::new(),
            noise: Vec::new(),
            pred_mean: Vec::new(),
            pred_cov: Vec::new(),
            filt_mean: Vec::new(),
            filt_cov: Vec::new(),
            smooth_mean: Vec::new(),
            smooth_cov: Vec::new(),
            mean: Vec::new(),
            var: Vec::new(),
            smoothed_len: 0,
            log_partition: 0.0,
            log_evidence: 0.0,
            joseph: false,
        }
    }

    /// Builds a chain over `times` with vacuous pseudo-observations.
    pub fn build(space: Arc<StateSpace>, times: &[f64]) -> Result<Self, ChainError> {
        let mut chain = Self::new(space);
        for &t in times {
            chain.push(t)?;
        }
        Ok(chain)
    }

    /// Use the Joseph-form covariance update in the filter.
    pub fn with_joseph(mut self, joseph: bool) -> Self {
        self.joseph = joseph;
        self
    }

    pub fn set_joseph(&mut self, joseph: bool) {
        self.joseph = joseph;
    }

    /// Appends a node at `t` with a vacuous pseudo-observation; returns its index.
    pub fn push(&mut self, t: f64) -> Result<usize, ChainError> {
        if !t.is_finite() {
            return Err(ChainError::NonFiniteTime(t));
        }
        let k = self.k;
        let n = self.times.len();
        let kk = k * k;
        if let Some(&prev) = self.times.last() {
            if t < prev {
                return Err(ChainError::Unsorted {
                    index: n,
                    prev,
                    next: t,
                });
            }
        }
        self.trans.resize((n + 1) * kk, 0.0);
        self.noise.resize((n + 1) * kk, 0.0);
        if let Some(&prev) = self.times.last() {
            let (a, q) = (
                &mut self.trans[n * kk..(n + 1) * kk],
                &mut self.noise[n * kk..(n + 1) * kk],
            );
            self.space.link_into(prev, t, a, q);
        }
        self.times.push(t);
        self.alpha.push(0.0);
        self.beta.push(0.0);
        Ok(n)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    /// Transition and noise matrices of the link into node `i` (row-major).
    pub fn link(&self, i: usize) -> (&[f64], &[f64]) {
        let kk = self.k * self.k;
        (
            &self.trans[i * kk..(i + 1) * kk],
            &self.noise[i * kk..(i + 1) * kk],
        )
    }

    pub fn site(&self, i: usize) -> (f64, f64) {
        (self.alpha[i], self.beta[i])
    }

    pub fn set_site(&mut self, i: usize, alpha: f64, beta: f64) -> Result<(), ChainError> {
        if !(beta >= 0.0 && beta.is_finite() && alpha.is_finite()) {
            return Err(ChainError::InvalidSite { node: i, beta });
        }
        self.alpha[i] = alpha;
        self.beta[i] = beta;
        Ok(())
    }

    /// Smoothed marginal `(μ, σ²)` of the score at node `i`.
    pub fn marginal(&self, i: usize) -> (f64, f64) {
        (self.mean[i], self.var[i])
    }

    pub fn is_smoothed(&self) -> bool {
        self.smoothed_len == self.times.len()
    }

    /// `log ∫ p(s) Π exp(α̃ s − β̃ s²/2) ds` from the last smoothing pass.
    pub fn log_partition(&self) -> f64 {
        self.log_partition
    }

    /// Log-evidence of the normalized pseudo-observations from the last pass.
    pub fn log_evidence(&self) -> f64 {
        self.log_evidence
    }

    /// Forward Kalman filter then backward RTS pass. Returns the log-evidence
    /// `log N(μ̃ | 0, K + Σ̃)` of the non-vacuous pseudo-observations.
    pub fn smooth(&mut self) -> Result<f64, ChainError> {
        let n = self.times.len();
        let k = self.k;
        let kk = k * k;
        for buf in [
            &mut self.pred_mean,
            &mut self.filt_mean,
            &mut self.smooth_mean,
        ] {
            buf.resize(n * k, 0.0);
        }
        for buf in [&mut self.pred_cov, &mut self.filt_cov, &mut self.smooth_cov] {
            buf.resize(n * kk, 0.0);
        }
        self.mean.resize(n, 0.0);
        self.var.resize(n, 0.0);

        let h = self.space.measurement().to_vec();
        let mut ph = vec![0.0; k];
        let mut tmp = vec![0.0; kk];
        let mut log_partition = 0.0;
        let mut site_consts = 0.0;

        for i in 0..n {
            let (pm, pc) = (i * k..(i + 1) * k, i * kk..(i + 1) * kk);
            if i == 0 {
                self.space.initial_into(
                    self.times[0],
                    &mut self.pred_mean[pm.clone()],
                    &mut self.pred_cov[pc.clone()],
                );
            } else {
                let a = &self.trans[pc.clone()];
                let q = &self.noise[pc.clone()];
                let (prev_m, prev_c) = ((i - 1) * k..i * k, (i - 1) * kk..i * kk);
                matvec(
                    a,
                    &self.filt_mean[prev_m],
                    &mut self.pred_mean[pm.clone()],
                    k,
                );
                matmul(a, &self.filt_cov[prev_c], &mut tmp, k);
                let pred = &mut self.pred_cov[pc.clone()];
                matmul_bt(&tmp, a, pred, k);
                for (p, q) in pred.iter_mut().zip(q) {
                    *p += q;
                }
                symmetrize(pred, k);
            }

            self.filt_mean[pm.clone()].copy_from_slice(&self.pred_mean[pm.clone()]);
            self.filt_cov[pc.clone()].copy_from_slice(&self.pred_cov[pc.clone()]);
            let (alpha, beta) = (self.alpha[i], self.beta[i]);
            if alpha != 0.0 || beta != 0.0 {
                let pcov = &self.pred_cov[pc.clone()];
                matvec(pcov, &h, &mut ph, k);
                let v = super::linalg::dot(&h, &ph);
                let m = super::linalg::dot(&h, &self.pred_mean[pm.clone()]);
                let denom = 1.0 + beta * v;
                log_partition += -0.5 * denom.ln()
                    + (alpha * m + 0.5 * alpha * alpha * v - 0.5 * beta * m * m) / denom;
                if beta > 0.0 {
                    site_consts += 0.5 * (beta.ln() - LN_2PI) - 0.5 * alpha * alpha / beta;
                }
                let gain = (alpha - beta * m) / denom;
                for (f, p) in self.filt_mean[pm.clone()].iter_mut().zip(&ph) {
                    *f += gain * p;
                }
                let fc = &mut self.filt_cov[pc.clone()];
                if self.joseph && beta > 0.0 {
                    // (I − g hᵀ) P (I − g hᵀ)ᵀ + g gᵀ / β with g = P h β / denom
                    let g: Vec<f64> = ph.iter().map(|p| p * beta / denom).collect();
                    let mut ikh = vec![0.0; kk];
                    for r in 0..k {
                        for c in 0..k {
                            ikh[r * k + c] = f64::from(u8::from(r == c)) - g[r] * h[c];
                        }
                    }
                    matmul(&ikh, pcov, &mut tmp, k);
                    matmul_bt(&tmp, &ikh, fc, k);
                    for r in 0..k {
                        for c in 0..k {
                            fc[r * k + c] += g[r] * g[c] / beta;
                        }
                    }
                } else {
                    let scale = beta / denom;
                    for r in 0..k {
                        for c in 0..k {
                            fc[r * k + c] -= scale * ph[r] * ph[c];
                        }
                    }
                }
                symmetrize(fc, k);
            }
            let finite = self.filt_cov[pc.clone()].iter().all(|v| v.is_finite())
                && self.filt_mean[pm].iter().all(|v| v.is_finite());
            if !finite {
                self.smoothed_len = 0;
                return Err(ChainError::Diverged { node: i });
            }
        }

        if n > 0 {
            let last = (n - 1) * k..n * k;
            let last_c = (n - 1) * kk..n * kk;
            self.smooth_mean[last.clone()].copy_from_slice(&self.filt_mean[last]);
            self.smooth_cov[last_c.clone()].copy_from_slice(&self.filt_cov[last_c]);
        }
        let mut gain = vec![0.0; kk];
        let mut inv = vec![0.0; kk];
        let mut work = vec![0.0; kk + k];
        let mut diff = vec![0.0; k];
        let mut dcov = vec![0.0; kk];
        for i in (0..n.saturating_sub(1)).rev() {
            let j = i + 1;
            let a = &self.trans[j * kk..(j + 1) * kk];
            pinv_psd(&self.pred_cov[j * kk..(j + 1) * kk], &mut inv, k, &mut work);
            // G = P_f Aᵀ P_pred⁺
            matmul_bt(&self.filt_cov[i * kk..(i + 1) * kk], a, &mut tmp, k);
            matmul(&tmp, &inv, &mut gain, k);
            for r in 0..k {
                diff[r] = self.smooth_mean[j * k + r] - self.pred_mean[j * k + r];
            }
            matvec(&gain, &diff, &mut ph, k);
            for r in 0..k {
                self.smooth_mean[i * k + r] = self.filt_mean[i * k + r] + ph[r];
            }
            for r in 0..kk {
                dcov[r] = self.smooth_cov[j * kk + r] - self.pred_cov[j * kk + r];
            }
            matmul(&gain, &dcov, &mut tmp, k);
            let out = &mut self.smooth_cov[i * kk..(i + 1) * kk];
            matmul_bt(&tmp, &gain, out, k);
            for r in 0..kk {
                out[r] += self.filt_cov[i * kk + r];
            }
            symmetrize(out, k);
        }
        for i in 0..n {
            self.mean[i] = super::linalg::dot(&h, &self.smooth_mean[i * k..(i + 1) * k]);
            self.var[i] = quad_form(&h, &self.smooth_cov[i * kk..(i + 1) * kk], k).max(0.0);
        }
        self.smoothed_len = n;
        self.log_partition = log_partition;
        self.log_evidence = log_partition + site_consts;
        Ok(self.log_evidence)
    }

    /// Posterior marginal of the score at an arbitrary time `t`, in constant
    /// time once the bracketing nodes are located.
    pub fn posterior_at(&self, t: f64) -> Result<(f64, f64), ChainError> {
        let n = self.times.len();
        let k = self.k;
        let kk = k * k;
        let h = self.space.measurement();
        if n == 0 {
            let mut m = vec![0.0; k];
            let mut p = vec![0.0; kk];
            self.space.initial_into(t, &mut m, &mut p);
            return Ok((0.0, quad_form(h, &p, k).max(0.0)));
        }
        if !self.is_smoothed() {
            return Err(ChainError::Stale);
        }
        // first node strictly after t
        let r = self.times.partition_point(|&x| x <= t);
        if r > 0 && self.times[r - 1] == t {
            return Ok(self.marginal(r - 1));
        }
        let read = |m: &[f64], p: &[f64]| (super::linalg::dot(h, m), quad_form(h, p, k).max(0.0));
        if r == n {
            let l = n - 1;
            let (m, p) = self.propagate(
                &self.smooth_mean[l * k..(l + 1) * k],
                &self.smooth_cov[l * kk..(l + 1) * kk],
                self.times[l],
                t,
            );
            return Ok(read(&m, &p));
        }
        // filtered state at t (no data at t itself)
        let (fm, fc) = if r == 0 {
            let mut m = vec![0.0; k];
            let mut p = vec![0.0; kk];
            self.space.initial_into(t, &mut m, &mut p);
            (m, p)
        } else {
            let l = r - 1;
            self.propagate(
                &self.filt_mean[l * k..(l + 1) * k],
                &self.filt_cov[l * kk..(l + 1) * kk],
                self.times[l],
                t,
            )
        };
        let (m, p) = self.rts_step(
            &fm,
            &fc,
            t,
            self.times[r],
            &self.smooth_mean[r * k..(r + 1) * k],
            &self.smooth_cov[r * kk..(r + 1) * kk],
        );
        Ok(read(&m, &p))
    }

    fn propagate(&self, m: &[f64], p: &[f64], from: f64, to: f64) -> (Vec<f64>, Vec<f64>) {
        let k = self.k;
        let mut a = vec![0.0; k * k];
        let mut q = vec![0.0; k * k];
        self.space.link_into(from, to, &mut a, &mut q);
        let mut m2 = vec![0.0; k];
        matvec(&a, m, &mut m2, k);
        let mut tmp = vec![0.0; k * k];
        let mut p2 = vec![0.0; k * k];
        matmul(&a, p, &mut tmp, k);
        matmul_bt(&tmp, &a, &mut p2, k);
        for (x, y) in p2.iter_mut().zip(&q) {
            *x += y;
        }
        symmetrize(&mut p2, k);
        (m2, p2)
    }

    // Smooths a filtered state at `t` against the smoothed state of the next node.
    fn rts_step(
        &self,
        fm: &[f64],
        fc: &[f64],
        t: f64,
        t_next: f64,
        sm_next: &[f64],
        sc_next: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let k = self.k;
        let kk = k * k;
        let mut a = vec![0.0; kk];
        let mut q = vec![0.0; kk];
        self.space.link_into(t, t_next, &mut a, &mut q);
        let (pm, pc) = self.propagate(fm, fc, t, t_next);
        let mut inv = vec![0.0; kk];
        let mut work = vec![0.0; kk + k];
        pinv_psd(&pc, &mut inv, k, &mut work);
        let mut tmp = vec![0.0; kk];
        let mut gain = vec![0.0; kk];
        matmul_bt(fc, &a, &mut tmp, k);
        matmul(&tmp, &inv, &mut gain, k);
        let diff: Vec<f64> = sm_next.iter().zip(&pm).map(|(s, p)| s - p).collect();
        let mut m = vec![0.0; k];
        matvec(&gain, &diff, &mut m, k);
        for (x, f) in m.iter_mut().zip(fm) {
            *x += f;
        }
        let dcov: Vec<f64> = sc_next.iter().zip(&pc).map(|(s, p)| s - p).collect();
        matmul(&gain, &dcov, &mut tmp, k);
        let mut p = vec![0.0; kk];
        matmul_bt(&tmp, &gain, &mut p, k);
        for (x, f) in p.iter_mut().zip(fc) {
            *x += f;
        }
        symmetrize(&mut p, k);
        (m, p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Kernel;

    fn chain(kernel: Kernel, times: &[f64]) -> FeatureChain {
        FeatureChain::build(Arc::new(kernel.to_state_space(0.0).unwrap()), times).unwrap()
    }

    #[test]
    fn empty_chain_smooths_to_nothing() {
        let mut c = chain(Kernel::constant(1.0).unwrap(), &[]);
        assert_eq!(c.smooth().unwrap(), 0.0);
        assert_eq!(c.posterior_at(3.0).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn duplicate_times_joined_by_identity() {
        let c = chain(Kernel::matern32(1.0, 1.0).unwrap(), &[1.0, 1.0]);
        let (a, q) = c.link(1);
        assert_eq!(a, &[1.0, 0.0, 0.0, 1.0]);
        assert!(q.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn matern12_link_values() {
        let c = chain(Kernel::matern12(1.0, 2.0).unwrap(), &[0.0, 1.0]);
        let (a, q) = c.link(1);
        assert!((a[0] - (-0.5f64).exp()).abs() < 1e-15);
        assert!((q[0] - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn unsorted_rejected() {
        let space = Arc::new(Kernel::constant(1.0).unwrap().to_state_space(0.0).unwrap());
        let err = FeatureChain::build(space, &[1.0, 0.5]).unwrap_err();
        assert!(matches!(err, ChainError::Unsorted { index: 1, .. }));
    }

    #[test]
    fn vacuous_sites_give_prior() {
        let k = Kernel::sum(vec![
            Kernel::wiener(0.5).unwrap(),
            Kernel::matern32(1.0, 0.8).unwrap(),
        ])
        .unwrap();
        let times = [0.1, 0.4, 0.4, 2.0, 3.5];
        let mut c = chain(k.clone(), &times);
        c.smooth().unwrap();
        for (i, &t) in times.iter().enumerate() {
            let (m, v) = c.marginal(i);
            assert_eq!(m, 0.0);
            assert!((v - k.evaluate(t, t)).abs() < 1e-12);
        }
    }

    #[test]
    fn conjugate_single_node() {
        let mut c = chain(Kernel::constant(1.0).unwrap(), &[0.0]);
        // μ̃ = 1, σ̃² = 1
        c.set_site(0, 1.0, 1.0).unwrap();
        let ev = c.smooth().unwrap();
        let (m, v) = c.marginal(0);
        assert!((m - 0.5).abs() < 1e-15);
        assert!((v - 0.5).abs() < 1e-15);
        // log N(1 | 0, 2)
        let want = -0.5 * (2.0 * std::f64::consts::PI * 2.0).ln() - 0.25;
        assert!((ev - want).abs() < 1e-14);
    }

    #[test]
    fn wiener_extrapolation_adds_diffusion() {
        let mut c = chain(Kernel::wiener(1.0).unwrap(), &[1.0, 2.0]);
        c.set_site(0, 0.3, 2.0).unwrap();
        c.set_site(1, -0.1, 1.0).unwrap();
        c.smooth().unwrap();
        let (m, v) = c.marginal(1);
        let (m2, v2) = c.posterior_at(2.75).unwrap();
        assert!((m2 - m).abs() < 1e-14);
        assert!((v2 - v - 0.75).abs() < 1e-12);
        assert_eq!(c.posterior_at(2.0).unwrap(), c.marginal(1));
    }

    #[test]
    fn stale_chain_refuses_queries() {
        let mut c = chain(Kernel::constant(1.0).unwrap(), &[0.0]);
        c.smooth().unwrap();
        c.push(1.0).unwrap();
        assert_eq!(c.posterior_at(0.5), Err(ChainError::Stale));
    }

    #[test]
    fn invalid_site_rejected() {
        let mut c = chain(Kernel::constant(1.0).unwrap(), &[0.0]);
        assert!(c.set_site(0, 0.0, -1.0).is_err());
        assert!(c.set_site(0, f64::NAN, 1.0).is_err());
    }
}
