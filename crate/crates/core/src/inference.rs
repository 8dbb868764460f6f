//! Batched pseudo-observation updates alternating with per-feature smoothing.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::likelihoods::{Likelihood, LikelihoodError};
use crate::model::{Feature, Model, Observation};
use crate::quadrature::{DEFAULT_NODES, MAX_NODES};
use crate::statespace::ChainError;

/// Precision values this far below zero are treated as rounding noise.
const CLAMP_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Ep,
    #[serde(rename = "reverse_kl")]
    ReverseKl,
}

/// Stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Change of the objective between successive iterations.
    #[default]
    LogMarginal,
    /// Largest change of any pseudo-observation parameter.
    Params,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub objective: Objective,
    /// Damping; `None` picks the likelihood's default.
    pub learning_rate: Option<f64>,
    pub tolerance: f64,
    pub max_iter: usize,
    pub criterion: Criterion,
    /// Starting Gauss-Hermite order for numerical derivatives.
    pub quadrature_nodes: usize,
    pub joseph: bool,
    /// Worker cap; `None` uses the global pool. Never affects results.
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Ep,
            learning_rate: None,
            tolerance: 1e-3,
            max_iter: 500,
            criterion: Criterion::LogMarginal,
            quadrature_nodes: DEFAULT_NODES,
            joseph: false,
            threads: None,
        }
    }
}

impl FitConfig {
    pub fn reverse_kl() -> Self {
        Self {
            objective: Objective::ReverseKl,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FitError> {
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0 && lr <= 1.0) {
                return Err(FitError::Config(format!(
                    "learning_rate must lie in (0, 1] (got {lr})"
                )));
            }
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(FitError::Config(format!(
                "tolerance must be positive (got {})",
                self.tolerance
            )));
        }
        if !(1..=MAX_NODES).contains(&self.quadrature_nodes) {
            return Err(FitError::Config(format!(
                "quadrature_nodes must lie in 1..={MAX_NODES} (got {})",
                self.quadrature_nodes
            )));
        }
        if self.threads == Some(0) {
            return Err(FitError::Config("threads must be at least 1".into()));
        }
        Ok(())
    }

    pub fn resolved_learning_rate(&self, likelihood: &Likelihood) -> f64 {
        self.learning_rate
            .unwrap_or_else(|| likelihood.default_learning_rate())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub objective: Objective,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after 0, 1, ..., `iterations` update rounds.
    pub log_marginal: Vec<f64>,
    /// Observation updates skipped because the cavity or the update was invalid.
    pub skipped_updates: u64,
    /// Precisions clamped from slightly negative to zero.
    pub clamped: u64,
    /// Rounds in which every observation was skipped.
    pub all_guarded_iterations: usize,
}

impl FitReport {
    pub fn final_log_marginal(&self) -> f64 {
        *self.log_marginal.last().expect("at least the initial value")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Progress {
    pub iter: usize,
    pub log_marginal: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error("model has no observations")]
    Empty,
    #[error("invalid fit configuration: {0}")]
    Config(String),
    #[error("observation {observation}: {source}")]
    Likelihood {
        observation: usize,
        source: LikelihoodError,
    },
    #[error("feature `{feature}`: {source}")]
    Chain { feature: String, source: ChainError },
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Removes a pseudo-observation from a Gaussian marginal. `None` when the
/// remaining precision is not positive.
pub fn cavity(mean: f64, var: f64, alpha: f64, beta: f64) -> Option<(f64, f64)> {
    if var <= 0.0 {
        return Some((mean, 0.0));
    }
    let prec = 1.0 / var - beta;
    if !(prec > 0.0) || !prec.is_finite() {
        return None;
    }
    let cvar = 1.0 / prec;
    Some((cvar * (mean / var - alpha), cvar))
}

/// Damped EP update of one pseudo-observation from cavity moments `(mean, var)`
/// and the log-partition derivatives. `None` when the update is invalid.
pub fn update_params_ep(
    coeff: f64,
    var: f64,
    mean: f64,
    d1: f64,
    d2: f64,
    lr: f64,
    old: (f64, f64),
) -> Option<(f64, f64)> {
    let x2d2 = coeff * coeff * d2;
    let denom = 1.0 + var * x2d2;
    if !(denom > 0.0) {
        return None;
    }
    let alpha = (1.0 - lr) * old.0 + lr * (coeff * d1 - mean * x2d2) / denom;
    let mut beta = (1.0 - lr) * old.1 + lr * (-x2d2) / denom;
    if beta < 0.0 {
        if beta < -CLAMP_SLACK {
            return None;
        }
        beta = 0.0;
    }
    if !(alpha.is_finite() && beta.is_finite()) {
        return None;
    }
    Some((alpha, beta))
}

/// Damped reverse-KL update from the posterior mean and the derivatives of the
/// expected log-likelihood. Negative precisions are clamped to zero.
pub fn update_params_kl(coeff: f64, mean: f64, d1: f64, d2: f64, lr: f64, old: (f64, f64)) -> (f64, f64) {
    let x2d2 = coeff * coeff * d2;
    let alpha = (1.0 - lr) * old.0 + lr * (coeff * d1 - mean * x2d2);
    let beta = (1.0 - lr) * old.1 + lr * (-x2d2);
    (alpha, beta.max(0.0))
}

/// `log ∫ N(u | mean, var) exp(α u − β u² / 2) du`.
fn site_log_norm(alpha: f64, beta: f64, mean: f64, var: f64) -> f64 {
    let s = 1.0 + beta * var;
    -0.5 * s.ln() + (alpha * mean + 0.5 * alpha * alpha * var - 0.5 * beta * mean * mean) / s
}

struct Ctx {
    likelihood: Likelihood,
    objective: Objective,
    lr: f64,
    nodes: usize,
}

#[derive(Default, Clone, Copy)]
struct Step {
    value: f64,
    guarded: bool,
    clamped: u32,
}

fn marginal(features: &[Feature], feature: u32, node: u32) -> (f64, f64) {
    let chain = features[feature as usize]
        .chain
        .as_ref()
        .expect("observed features have chains");
    let (m, v) = chain.marginal(node as usize);
    (m, v.max(0.0))
}

/// Objective contribution of one observation at the current state. With
/// `propose` the updated sites are stored in the terms' pending slots.
fn evaluate(obs: &mut Observation, features: &[Feature], ctx: &Ctx, propose: bool) -> Result<Step, LikelihoodError> {
    let mut step = Step::default();
    match ctx.objective {
        Objective::Ep => {
            let (mut cm, mut cv) = (0.0, 0.0);
            for t in &obs.terms {
                let (m, v) = marginal(features, t.feature, t.node);
                let (m, v) = match cavity(m, v, t.alpha, t.beta) {
                    Some(c) => c,
                    None => {
                        step.guarded = true;
                        (m, v)
                    }
                };
                cm += t.coeff * m;
                cv += t.coeff * t.coeff * v;
            }
            let d = ctx
                .likelihood
                .ep_derivatives_with(obs.outcome, cm, cv, ctx.nodes)?;
            step.value = d.value;
            let mut proposals_ok = !step.guarded;
            for t in obs.terms.iter_mut() {
                let (m, v) = marginal(features, t.feature, t.node);
                let (m, v) = cavity(m, v, t.alpha, t.beta).unwrap_or((m, v));
                step.value -= site_log_norm(t.alpha, t.beta, m, v);
                if propose && proposals_ok {
                    match update_params_ep(t.coeff, v, m, d.d1, d.d2, ctx.lr, (t.alpha, t.beta)) {
                        Some((a, b)) => {
                            t.pending = (a, b);
                        }
                        None => proposals_ok = false,
                    }
                }
            }
            if propose {
                if proposals_ok {
                    for t in obs.terms.iter_mut() {
                        if t.pending.1 == 0.0 && t.beta != 0.0 {
                            step.clamped += 1;
                        }
                    }
                } else {
                    step.guarded = true;
                    for t in obs.terms.iter_mut() {
                        t.pending = (t.alpha, t.beta);
                    }
                }
            }
        }
        Objective::ReverseKl => {
            let (mut pm, mut pv) = (0.0, 0.0);
            for t in &obs.terms {
                let (m, v) = marginal(features, t.feature, t.node);
                pm += t.coeff * m;
                pv += t.coeff * t.coeff * v;
            }
            let d = ctx
                .likelihood
                .kl_derivatives_with(obs.outcome, pm, pv, ctx.nodes)?;
            step.value = d.value;
            for t in obs.terms.iter_mut() {
                let (m, v) = marginal(features, t.feature, t.node);
                step.value -= t.alpha * m - 0.5 * t.beta * (m * m + v);
                if propose {
                    let x2d2 = t.coeff * t.coeff * d.d2;
                    let raw = (1.0 - ctx.lr) * t.beta - ctx.lr * x2d2;
                    if raw < 0.0 {
                        step.clamped += 1;
                    }
                    t.pending = update_params_kl(t.coeff, m, d.d1, d.d2, ctx.lr, (t.alpha, t.beta));
                }
            }
        }
    }
    Ok(step)
}

/// Copies the current sites of a feature's nodes into its chain and smooths it.
pub(crate) fn resmooth(feature: &mut Feature, observations: &[Observation]) -> Result<(), (String, ChainError)> {
    let Some(chain) = feature.chain.as_mut() else {
        return Ok(());
    };
    for (i, &(o, k)) in feature.nodes.iter().enumerate() {
        let t = &observations[o as usize].terms[k as usize];
        chain
            .set_site(i, t.alpha, t.beta)
            .map_err(|e| (feature.id.clone(), e))?;
    }
    chain.smooth().map_err(|e| (feature.id.clone(), e))?;
    Ok(())
}

fn smooth_all(model: &mut Model) -> Result<(), FitError> {
    let observations = &model.observations;
    model
        .features
        .par_iter_mut()
        .try_for_each(|f| resmooth(f, observations))
        .map_err(|(feature, source)| FitError::Chain { feature, source })
}

fn chain_term(model: &Model) -> f64 {
    model
        .features
        .iter()
        .filter_map(|f| f.chain.as_ref())
        .map(|c| c.log_partition())
        .sum()
}

struct Pass {
    value: f64,
    guarded: u64,
    clamped: u64,
}

fn pass(model: &mut Model, ctx: &Ctx, propose: bool) -> Result<Pass, FitError> {
    let features = &model.features;
    let steps: Vec<Result<Step, (usize, LikelihoodError)>> = model
        .observations
        .par_iter_mut()
        .enumerate()
        .map(|(n, obs)| evaluate(obs, features, ctx, propose).map_err(|e| (n, e)))
        .collect();
    let mut out = Pass {
        value: chain_term(model),
        guarded: 0,
        clamped: 0,
    };
    for s in steps {
        let s = s.map_err(|(observation, source)| FitError::Likelihood { observation, source })?;
        out.value += s.value;
        out.guarded += s.guarded as u64;
        out.clamped += s.clamped as u64;
    }
    Ok(out)
}

/// Objective of the current state without modifying any site.
pub(crate) fn objective_value(model: &Model, objective: Objective) -> f64 {
    let ctx = Ctx {
        likelihood: model.likelihood,
        objective,
        lr: 1.0,
        nodes: DEFAULT_NODES,
    };
    let features = &model.features;
    let terms: Vec<f64> = model
        .observations
        .par_iter()
        .map(|obs| {
            let mut scratch = obs.clone();
            evaluate(&mut scratch, features, &ctx, false)
                .map(|s| s.value)
                .unwrap_or(f64::NAN)
        })
        .collect();
    chain_term(model) + terms.into_iter().sum::<f64>()
}

/// Commits the proposed sites; returns the largest parameter change.
fn apply(model: &mut Model) -> f64 {
    model
        .observations
        .par_iter_mut()
        .map(|obs| {
            let mut delta: f64 = 0.0;
            for t in obs.terms.iter_mut() {
                delta = delta
                    .max((t.pending.0 - t.alpha).abs())
                    .max((t.pending.1 - t.beta).abs());
                t.alpha = t.pending.0;
                t.beta = t.pending.1;
            }
            delta
        })
        .reduce(|| 0.0, f64::max)
}

pub fn fit(model: &mut Model, config: &FitConfig) -> Result<FitReport, FitError> {
    fit_with_progress(model, config, |_| {})
}

/// Like [`fit`], calling `progress` after every round.
pub fn fit_with_progress<F: FnMut(&Progress) + Send>(
    model: &mut Model,
    config: &FitConfig,
    progress: F,
) -> Result<FitReport, FitError> {
    config.validate()?;
    if model.observations.is_empty() {
        return Err(FitError::Empty);
    }
    match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| FitError::Pool(e.to_string()))?
            .install(|| run(model, config, progress)),
        None => run(model, config, progress),
    }
}

fn run<F: FnMut(&Progress)>(model: &mut Model, config: &FitConfig, mut progress: F) -> Result<FitReport, FitError> {
    let start = Instant::now();
    model.set_joseph(config.joseph);
    model.objective = config.objective;
    let ctx = Ctx {
        likelihood: model.likelihood,
        objective: config.objective,
        lr: config.resolved_learning_rate(&model.likelihood),
        nodes: config.quadrature_nodes,
    };
    model.smoothed = false;
    smooth_all(model)?;
    model.smoothed = true;

    let n_obs = model.observations.len() as u64;
    let mut current = pass(model, &ctx, true)?;
    let mut report = FitReport {
        objective: config.objective,
        iterations: 0,
        converged: false,
        log_marginal: vec![current.value],
        skipped_updates: 0,
        clamped: 0,
        all_guarded_iterations: 0,
    };
    progress(&Progress {
        iter: 0,
        log_marginal: current.value,
        elapsed_s: start.elapsed().as_secs_f64(),
    });
    for iter in 1..=config.max_iter {
        report.skipped_updates += current.guarded;
        report.clamped += current.clamped;
        if current.guarded == n_obs {
            report.all_guarded_iterations += 1;
        }
        let delta = apply(model);
        model.smoothed = false;
        smooth_all(model)?;
        model.smoothed = true;
        let next = pass(model, &ctx, true)?;
        report.iterations = iter;
        report.log_marginal.push(next.value);
        progress(&Progress {
            iter,
            log_marginal: next.value,
            elapsed_s: start.elapsed().as_secs_f64(),
        });
        let done = match config.criterion {
            Criterion::LogMarginal => (next.value - current.value).abs() < config.tolerance,
            Criterion::Params => delta < config.tolerance,
        };
        current = next;
        if done {
            report.converged = true;
            break;
        }
    }
    model.report = Some(report.clone());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cavity_examples() {
        assert_eq!(cavity(0.3, 0.7, 0.0, 0.0), Some((0.3, 0.7)));
        let (m, v) = cavity(1.0, 0.5, 1.0, 1.0).unwrap();
        assert!((m - 1.0).abs() < 1e-15 && (v - 1.0).abs() < 1e-15);
        assert_eq!(cavity(1.0, 0.5, 0.0, 2.0), None);
    }

    #[test]
    fn zero_learning_rate_keeps_sites() {
        assert_eq!(update_params_ep(1.3, 0.4, 0.2, 0.5, -0.3, 0.0, (0.7, 0.9)), Some((0.7, 0.9)));
        assert_eq!(update_params_kl(1.3, 0.2, 0.5, -0.3, 0.0, (0.7, 0.9)), (0.7, 0.9));
    }

    #[test]
    fn zero_coefficient_decays_sites() {
        let (a, b) = update_params_ep(0.0, 0.4, 0.2, 0.5, -0.3, 0.25, (0.8, 0.4)).unwrap();
        assert!((a - 0.6).abs() < 1e-15 && (b - 0.3).abs() < 1e-15);
        let (a, b) = update_params_kl(0.0, 0.2, 0.5, -0.3, 0.25, (0.8, 0.4));
        assert!((a - 0.6).abs() < 1e-15 && (b - 0.3).abs() < 1e-15);
    }

    #[test]
    fn kl_update_with_flat_curvature() {
        let (a, b) = update_params_kl(2.0, 0.7, 0.3, 0.0, 0.5, (1.0, 0.8));
        assert!((a - (0.5 + 0.5 * 2.0 * 0.3)).abs() < 1e-15);
        assert!((b - 0.4).abs() < 1e-15);
    }

    #[test]
    fn ep_update_guards_nonpositive_denominator() {
        assert_eq!(update_params_ep(1.0, 2.0, 0.0, 0.1, -0.5, 1.0, (0.0, 0.0)), None);
    }

    #[test]
    fn site_normalizer_matches_quadrature() {
        let (a, b, m, v) = (0.7, 0.9, -0.4, 1.3);
        let rule = crate::quadrature::GaussHermite::new(64);
        let z: f64 = rule
            .points(m, v)
            .map(|(u, w)| w * (a * u - 0.5 * b * u * u).exp())
            .sum();
        assert!((z.ln() - site_log_norm(a, b, m, v)).abs() < 1e-12);
    }
}
