//! Observation models `p(y | d)` for a score difference `d`, with the
//! moment oracles used by the two inference objectives.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::{GaussHermite, DEFAULT_NODES, MAX_NODES};
use crate::special::{
    ln_factorial, log_norm_cdf_diff, log_sigmoid, log_sigmoid_diff, log_sum_exp, mills,
    norm_cdf, norm_logcdf, norm_logpdf, sigmoid, LN_2PI,
};

#[derive(Debug, Error, PartialEq)]
pub enum LikelihoodError {
    #[error("outcome {outcome} is not in the outcome space of the {likelihood} likelihood")]
    InvalidOutcome {
        likelihood: &'static str,
        outcome: Outcome,
    },
    #[error("{likelihood}: `{field}` must be positive and finite, got {value}")]
    InvalidParameter {
        likelihood: &'static str,
        field: &'static str,
        value: f64,
    },
    #[error("{likelihood}: missing field `{field}`")]
    MissingField {
        likelihood: &'static str,
        field: &'static str,
    },
    #[error("{likelihood}: field `{field}` does not apply")]
    UnexpectedField {
        likelihood: &'static str,
        field: &'static str,
    },
    #[error("unknown likelihood `{0}`")]
    Unknown(String),
    #[error("invalid moments: mean {mean}, variance {var}")]
    InvalidMoments { mean: f64, var: f64 },
    #[error("non-finite derivatives (mean {mean}, variance {var})")]
    NonFinite { mean: f64, var: f64 },
}

/// Observed result of one comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// `+1` win, `-1` loss, `0` tie, from the point of view of the positive side.
    Ordinal(i8),
    Count(u64),
    Real(f64),
}

impl Outcome {
    pub const WIN: Outcome = Outcome::Ordinal(1);
    pub const LOSS: Outcome = Outcome::Ordinal(-1);
    pub const TIE: Outcome = Outcome::Ordinal(0);

    fn value(&self) -> f64 {
        match *self {
            Outcome::Ordinal(v) => f64::from(v),
            Outcome::Count(c) => c as f64,
            Outcome::Real(r) => r,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Ordinal(v) => write!(f, "ordinal({v})"),
            Outcome::Count(c) => write!(f, "count({c})"),
            Outcome::Real(r) => write!(f, "real({r})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeSpace {
    Binary,
    Ternary,
    Count,
    Real,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LikelihoodRepr", into = "LikelihoodRepr")]
pub enum Likelihood {
    Probit,
    Logit,
    OrdinalProbit { draw_margin: f64 },
    OrdinalLogit { draw_margin: f64 },
    PoissonExp,
    /// Real-valued outcome `y ~ N(d, obs_noise)`.
    Gaussian { obs_noise: f64 },
}

/// `(log Z or L, first derivative, second derivative)` with respect to the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivatives {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LikelihoodRepr {
    likelihood: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    draw_margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    obs_noise: Option<f64>,
}

impl TryFrom<LikelihoodRepr> for Likelihood {
    type Error = LikelihoodError;

    fn try_from(r: LikelihoodRepr) -> Result<Self, Self::Error> {
        let name: &'static str = match r.likelihood.as_str() {
            "probit" => "probit",
            "logit" => "logit",
            "ordinal_probit" => "ordinal_probit",
            "ordinal_logit" => "ordinal_logit",
            "poisson_exp" => "poisson_exp",
            "gaussian" => "gaussian",
            other => return Err(LikelihoodError::Unknown(other.to_string())),
        };
        let want_margin = matches!(name, "ordinal_probit" | "ordinal_logit");
        let want_noise = name == "gaussian";
        if !want_margin && r.draw_margin.is_some() {
            return Err(LikelihoodError::UnexpectedField {
                likelihood: name,
                field: "draw_margin",
            });
        }
        if !want_noise && r.obs_noise.is_some() {
            return Err(LikelihoodError::UnexpectedField {
                likelihood: name,
                field: "obs_noise",
            });
        }
        let margin = || {
            r.draw_margin.ok_or(LikelihoodError::MissingField {
                likelihood: name,
                field: "draw_margin",
            })
        };
        let lik = match name {
            "probit" => Likelihood::Probit,
            "logit" => Likelihood::Logit,
            "ordinal_probit" => Likelihood::OrdinalProbit {
                draw_margin: margin()?,
            },
            "ordinal_logit" => Likelihood::OrdinalLogit {
                draw_margin: margin()?,
            },
            "poisson_exp" => Likelihood::PoissonExp,
            _ => Likelihood::Gaussian {
                obs_noise: r.obs_noise.ok_or(LikelihoodError::MissingField {
                    likelihood: name,
                    field: "obs_noise",
                })?,
            },
        };
        lik.validate()?;
        Ok(lik)
    }
}

impl From<Likelihood> for LikelihoodRepr {
    fn from(l: Likelihood) -> Self {
        let (draw_margin, obs_noise) = match l {
            Likelihood::OrdinalProbit { draw_margin } | Likelihood::OrdinalLogit { draw_margin } => {
                (Some(draw_margin), None)
            }
            Likelihood::Gaussian { obs_noise } => (None, Some(obs_noise)),
            _ => (None, None),
        };
        LikelihoodRepr {
            likelihood: l.name().to_string(),
            draw_margin,
            obs_noise,
        }
    }
}

fn positive(likelihood: &'static str, field: &'static str, value: f64) -> Result<(), LikelihoodError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(LikelihoodError::InvalidParameter {
            likelihood,
            field,
            value,
        })
    }
}

// σ'(x) and σ''(x) divided by a normalizer given in log space.
fn logistic_d1_ratio(x: f64, log_norm: f64) -> f64 {
    (log_sigmoid(x) + log_sigmoid(-x) - log_norm).exp()
}

fn logistic_d2_ratio(x: f64, log_norm: f64) -> f64 {
    logistic_d1_ratio(x, log_norm) * (-0.5 * x).tanh()
}

impl Likelihood {
    pub fn ordinal_probit(draw_margin: f64) -> Result<Self, LikelihoodError> {
        let l = Likelihood::OrdinalProbit { draw_margin };
        l.validate()?;
        Ok(l)
    }

    pub fn ordinal_logit(draw_margin: f64) -> Result<Self, LikelihoodError> {
        let l = Likelihood::OrdinalLogit { draw_margin };
        l.validate()?;
        Ok(l)
    }

    pub fn gaussian(obs_noise: f64) -> Result<Self, LikelihoodError> {
        let l = Likelihood::Gaussian { obs_noise };
        l.validate()?;
        Ok(l)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Likelihood::Probit => "probit",
            Likelihood::Logit => "logit",
            Likelihood::OrdinalProbit { .. } => "ordinal_probit",
            Likelihood::OrdinalLogit { .. } => "ordinal_logit",
            Likelihood::PoissonExp => "poisson_exp",
            Likelihood::Gaussian { .. } => "gaussian",
        }
    }

    pub fn validate(&self) -> Result<(), LikelihoodError> {
        match *self {
            Likelihood::OrdinalProbit { draw_margin } | Likelihood::OrdinalLogit { draw_margin } => {
                positive(self.name(), "draw_margin", draw_margin)
            }
            Likelihood::Gaussian { obs_noise } => positive(self.name(), "obs_noise", obs_noise),
            _ => Ok(()),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    pub fn outcome_space(&self) -> OutcomeSpace {
        match self {
            Likelihood::Probit | Likelihood::Logit => OutcomeSpace::Binary,
            Likelihood::OrdinalProbit { .. } | Likelihood::OrdinalLogit { .. } => {
                OutcomeSpace::Ternary
            }
            Likelihood::PoissonExp => OutcomeSpace::Count,
            Likelihood::Gaussian { .. } => OutcomeSpace::Real,
        }
    }

    /// Learning rate used when none is configured.
    pub fn default_learning_rate(&self) -> f64 {
        match self {
            Likelihood::PoissonExp => 0.8,
            _ => 1.0,
        }
    }

    pub fn check_outcome(&self, y: Outcome) -> Result<(), LikelihoodError> {
        let ok = match (self.outcome_space(), y) {
            (OutcomeSpace::Binary, Outcome::Ordinal(v)) => v == 1 || v == -1,
            (OutcomeSpace::Ternary, Outcome::Ordinal(v)) => (-1..=1).contains(&v),
            (OutcomeSpace::Count, Outcome::Count(_)) => true,
            (OutcomeSpace::Real, Outcome::Real(r)) => r.is_finite(),
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(LikelihoodError::InvalidOutcome {
                likelihood: self.name(),
                outcome: y,
            })
        }
    }

    /// `(log p(y|d), ∂/∂d, ∂²/∂d²)`. Assumes `y` was validated.
    fn point(&self, y: Outcome, d: f64) -> (f64, f64, f64) {
        let yv = y.value();
        match *self {
            Likelihood::Probit => {
                let z = yv * d;
                let r = mills(z);
                (norm_logcdf(z), yv * r, -r * (z + r))
            }
            Likelihood::Logit => {
                let z = yv * d;
                (log_sigmoid(z), yv * sigmoid(-z), -sigmoid(z) * sigmoid(-z))
            }
            Likelihood::OrdinalProbit { draw_margin: a } => {
                if yv != 0.0 {
                    let z = yv * d - a;
                    let r = mills(z);
                    (norm_logcdf(z), yv * r, -r * (z + r))
                } else {
                    let (lo, hi) = (d - a, d + a);
                    let lz = log_norm_cdf_diff(lo, hi);
                    let plo = (norm_logpdf(lo) - lz).exp();
                    let phi = (norm_logpdf(hi) - lz).exp();
                    let g = phi - plo;
                    (lz, g, -hi * phi + lo * plo - g * g)
                }
            }
            Likelihood::OrdinalLogit { draw_margin: a } => {
                if yv != 0.0 {
                    let z = yv * d - a;
                    (log_sigmoid(z), yv * sigmoid(-z), -sigmoid(z) * sigmoid(-z))
                } else {
                    let (lo, hi) = (d - a, d + a);
                    let lz = log_sigmoid_diff(lo, hi);
                    let g = logistic_d1_ratio(hi, lz) - logistic_d1_ratio(lo, lz);
                    let h = logistic_d2_ratio(hi, lz) - logistic_d2_ratio(lo, lz) - g * g;
                    (lz, g, h)
                }
            }
            Likelihood::PoissonExp => {
                let e = d.exp();
                (yv * d - e - ln_factorial(yv), yv - e, -e)
            }
            Likelihood::Gaussian { obs_noise } => {
                let r = yv - d;
                (
                    -0.5 * (LN_2PI + obs_noise.ln()) - 0.5 * r * r / obs_noise,
                    r / obs_noise,
                    -1.0 / obs_noise,
                )
            }
        }
    }

    /// `log p(y | d)`.
    pub fn log_pdf(&self, y: Outcome, d: f64) -> Result<f64, LikelihoodError> {
        self.check_outcome(y)?;
        Ok(self.point(y, d).0)
    }

    /// First and second `d`-derivatives of `log p(y | d)`.
    pub fn log_pdf_derivatives(&self, y: Outcome, d: f64) -> Result<(f64, f64), LikelihoodError> {
        self.check_outcome(y)?;
        let (_, g, h) = self.point(y, d);
        Ok((g, h))
    }

    /// Log-partition `log ∫ p(y|u) N(u | mean, var) du` and its mean derivatives.
    pub fn ep_derivatives(&self, y: Outcome, mean: f64, var: f64) -> Result<Derivatives, LikelihoodError> {
        self.ep_derivatives_with(y, mean, var, DEFAULT_NODES)
    }

    pub fn ep_derivatives_with(
        &self,
        y: Outcome,
        mean: f64,
        var: f64,
        nodes: usize,
    ) -> Result<Derivatives, LikelihoodError> {
        self.check_outcome(y)?;
        check_moments(mean, var)?;
        let yv = y.value();
        let out = match *self {
            Likelihood::Probit => probit_ep(yv * mean, var, 0.0, yv),
            Likelihood::OrdinalProbit { draw_margin } if yv != 0.0 => {
                probit_ep(yv * mean, var, draw_margin, yv)
            }
            Likelihood::OrdinalProbit { draw_margin: a } => {
                let s2 = 1.0 + var;
                let s = s2.sqrt();
                let (lo, hi) = ((mean - a) / s, (mean + a) / s);
                let lz = log_norm_cdf_diff(lo, hi);
                let plo = (norm_logpdf(lo) - lz).exp();
                let phi = (norm_logpdf(hi) - lz).exp();
                let d1 = (phi - plo) / s;
                Derivatives {
                    value: lz,
                    d1,
                    d2: (-hi * phi + lo * plo) / s2 - d1 * d1,
                }
            }
            Likelihood::Gaussian { obs_noise } => {
                let v = obs_noise + var;
                let r = y.value() - mean;
                Derivatives {
                    value: -0.5 * (LN_2PI + v.ln()) - 0.5 * r * r / v,
                    d1: r / v,
                    d2: -1.0 / v,
                }
            }
            _ => refine(nodes, |rule| self.tilted_moments(y, mean, var, rule)),
        };
        finish(out, mean, var)
    }

    /// Log-partition derivatives by quadrature for any likelihood, bypassing
    /// closed forms. `nodes` is the starting order.
    pub fn ep_derivatives_numeric(
        &self,
        y: Outcome,
        mean: f64,
        var: f64,
        nodes: usize,
    ) -> Result<Derivatives, LikelihoodError> {
        self.check_outcome(y)?;
        check_moments(mean, var)?;
        finish(
            refine(nodes, |rule| self.tilted_moments(y, mean, var, rule)),
            mean,
            var,
        )
    }

    // Mode and curvature of u ↦ log p(y|u) + log N(u | mean, var), by damped
    // Newton. The objective is strictly concave.
    fn tilted_mode(&self, y: Outcome, mean: f64, var: f64) -> (f64, f64) {
        let objective = |u: f64| self.point(y, u).0 - 0.5 * (u - mean) * (u - mean) / var;
        let mut u = mean;
        for _ in 0..100 {
            let (_, g, h) = self.point(y, u);
            let step = -(g - (u - mean) / var) / (h - 1.0 / var);
            if !step.is_finite() || step.abs() <= 1e-13 * (1.0 + u.abs()) {
                break;
            }
            let base = objective(u);
            let mut t = 1.0;
            while t > 1e-10 && !(objective(u + t * step) >= base) {
                t *= 0.5;
            }
            u += t * step;
        }
        let (_, _, h) = self.point(y, u);
        (u, 1.0 / (1.0 / var - h))
    }

    // Quadrature recentered on the tilted density's Laplace approximation:
    // δ₁ = E_h[g], δ₂ = E_h[h] + Var_h[g] under the tilted weights.
    fn tilted_moments(&self, y: Outcome, mean: f64, var: f64, rule: &GaussHermite) -> Derivatives {
        if var == 0.0 {
            let (value, d1, d2) = self.point(y, mean);
            return Derivatives { value, d1, d2 };
        }
        let (center, spread) = self.tilted_mode(y, mean, var);
        let n = rule.len();
        let mut logw = Vec::with_capacity(n);
        let mut grads = Vec::with_capacity(n);
        let mut hess = Vec::with_capacity(n);
        for (u, w) in rule.points(center, spread) {
            let (lp, g, h) = self.point(y, u);
            let prior = -0.5 * (u - mean) * (u - mean) / var - 0.5 * var.ln();
            let proposal = -0.5 * (u - center) * (u - center) / spread - 0.5 * spread.ln();
            logw.push(w.ln() + lp + prior - proposal);
            grads.push(g);
            hess.push(h);
        }
        let lz = log_sum_exp(&logw);
        let omega: Vec<f64> = logw.iter().map(|l| (l - lz).exp()).collect();
        let d1: f64 = omega.iter().zip(&grads).map(|(o, g)| o * g).sum();
        let eh: f64 = omega.iter().zip(&hess).map(|(o, h)| o * h).sum();
        let spread_g: f64 = omega
            .iter()
            .zip(&grads)
            .map(|(o, g)| o * (g - d1) * (g - d1))
            .sum();
        Derivatives {
            value: lz,
            d1,
            d2: eh + spread_g,
        }
    }

    /// Expected log-likelihood `∫ log p(y|u) N(u | mean, var) du` and its mean
    /// derivatives.
    pub fn kl_derivatives(&self, y: Outcome, mean: f64, var: f64) -> Result<Derivatives, LikelihoodError> {
        self.kl_derivatives_with(y, mean, var, DEFAULT_NODES)
    }

    pub fn kl_derivatives_with(
        &self,
        y: Outcome,
        mean: f64,
        var: f64,
        nodes: usize,
    ) -> Result<Derivatives, LikelihoodError> {
        self.check_outcome(y)?;
        check_moments(mean, var)?;
        let out = match *self {
            Likelihood::Gaussian { obs_noise } => {
                let r = y.value() - mean;
                Derivatives {
                    value: -0.5 * (LN_2PI + obs_noise.ln()) - 0.5 * (r * r + var) / obs_noise,
                    d1: r / obs_noise,
                    d2: -1.0 / obs_noise,
                }
            }
            Likelihood::PoissonExp => {
                let yv = y.value();
                let e = (mean + 0.5 * var).exp();
                Derivatives {
                    value: yv * mean - e - ln_factorial(yv),
                    d1: yv - e,
                    d2: -e,
                }
            }
            _ => refine(nodes, |rule| {
                let (mut l, mut d1, mut d2) = (0.0, 0.0, 0.0);
                for (u, w) in rule.points(mean, var) {
                    let (lp, g, h) = self.point(y, u);
                    l += w * lp;
                    d1 += w * g;
                    d2 += w * h;
                }
                Derivatives { value: l, d1, d2 }
            }),
        };
        finish(out, mean, var)
    }

    /// `[p(loss), p(tie), p(win)]` for a score difference `d ~ N(mean, var)`.
    ///
    /// Count and real likelihoods are mapped onto ordinal results by comparing
    /// the two sides' scores. With `ties == false` the tie mass is removed and
    /// the rest renormalized; binary likelihoods always give `p(tie) = 0`.
    pub fn outcome_probs(&self, mean: f64, var: f64, ties: bool) -> [f64; 3] {
        let rule = GaussHermite::cached(DEFAULT_NODES);
        let var = var.max(0.0);
        let probs = match *self {
            Likelihood::Probit => {
                let win = norm_cdf(mean / (1.0 + var).sqrt());
                [1.0 - win, 0.0, win]
            }
            Likelihood::OrdinalProbit { draw_margin: a } => {
                let s = (1.0 + var).sqrt();
                let win = norm_cdf((mean - a) / s);
                let loss = norm_cdf((-mean - a) / s);
                let tie = log_norm_cdf_diff((mean - a) / s, (mean + a) / s).exp();
                [loss, tie, win]
            }
            Likelihood::Logit => {
                let win = rule.expect(mean, var, sigmoid);
                [1.0 - win, 0.0, win]
            }
            Likelihood::OrdinalLogit { draw_margin: a } => {
                let win = rule.expect(mean, var, |u| sigmoid(u - a));
                let loss = rule.expect(mean, var, |u| sigmoid(-u - a));
                let tie = rule.expect(mean, var, |u| log_sigmoid_diff(u - a, u + a).exp());
                [loss, tie, win]
            }
            Likelihood::Gaussian { obs_noise } => {
                let s = (obs_noise + var).sqrt();
                if ties {
                    let win = norm_cdf((mean - 0.5) / s);
                    let loss = norm_cdf((-mean - 0.5) / s);
                    [loss, log_norm_cdf_diff((mean - 0.5) / s, (mean + 0.5) / s).exp(), win]
                } else {
                    let win = norm_cdf(mean / s);
                    [1.0 - win, 0.0, win]
                }
            }
            Likelihood::PoissonExp => {
                let mut acc = [0.0; 3];
                for (u, w) in rule.points(mean, var) {
                    let p = poisson_race(u.exp(), (-u).exp());
                    for k in 0..3 {
                        acc[k] += w * p[k];
                    }
                }
                acc
            }
        };
        normalize(probs, ties)
    }
}

// Doubles the rule order until successive results agree, up to MAX_NODES.
fn refine<F: Fn(&GaussHermite) -> Derivatives>(nodes: usize, eval: F) -> Derivatives {
    const TOL: f64 = 1e-10;
    let mut n = nodes.clamp(1, MAX_NODES);
    let mut prev = eval(GaussHermite::cached(n));
    while n < MAX_NODES {
        n = (2 * n).min(MAX_NODES);
        let next = eval(GaussHermite::cached(n));
        let close = |a: f64, b: f64| (a - b).abs() <= TOL * a.abs().max(1.0);
        let done = close(next.value, prev.value) && close(next.d1, prev.d1) && close(next.d2, prev.d2);
        prev = next;
        if done {
            break;
        }
    }
    prev
}

fn check_moments(mean: f64, var: f64) -> Result<(), LikelihoodError> {
    if mean.is_finite() && var.is_finite() && var >= 0.0 {
        Ok(())
    } else {
        Err(LikelihoodError::InvalidMoments { mean, var })
    }
}

fn finish(mut d: Derivatives, mean: f64, var: f64) -> Result<Derivatives, LikelihoodError> {
    if !(d.value.is_finite() && d.d1.is_finite() && d.d2.is_finite()) {
        return Err(LikelihoodError::NonFinite { mean, var });
    }
    // every likelihood here is log-concave; clip rounding noise
    d.d2 = d.d2.min(0.0);
    Ok(d)
}

// log Φ((m − a)/√(1+v)) with m = y·mean, derivatives mapped back through y.
fn probit_ep(m: f64, var: f64, margin: f64, y: f64) -> Derivatives {
    let s2 = 1.0 + var;
    let s = s2.sqrt();
    let z = (m - margin) / s;
    let r = mills(z);
    Derivatives {
        value: norm_logcdf(z),
        d1: y * r / s,
        d2: -r * (z + r) / s2,
    }
}

fn normalize(mut p: [f64; 3], ties: bool) -> [f64; 3] {
    for v in p.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    if !ties {
        p[1] = 0.0;
    }
    let total: f64 = p.iter().sum();
    if total > 0.0 {
        for v in p.iter_mut() {
            *v /= total;
        }
    } else {
        p = if ties { [1.0 / 3.0; 3] } else { [0.5, 0.0, 0.5] };
    }
    p
}

// Outcome of independent Poisson counts with rates `ri` (positive side) and
// `rj`, as [P(Yi < Yj), P(Yi = Yj), P(Yi > Yj)].
fn poisson_race(ri: f64, rj: f64) -> [f64; 3] {
    let pmf = |rate: f64| {
        let mut out = Vec::new();
        let mut p = (-rate).exp();
        let mut cum = 0.0;
        let mut k = 0.0;
        loop {
            out.push(p);
            cum += p;
            k += 1.0;
            if (k > rate && 1.0 - cum < 1e-12) || out.len() > 100_000 {
                break;
            }
            p *= rate / k;
        }
        out
    };
    let (pi, pj) = (pmf(ri), pmf(rj));
    let mut cdf_j = 0.0;
    let (mut win, mut tie) = (0.0, 0.0);
    for (k, &p) in pi.iter().enumerate() {
        let pj_k = pj.get(k).copied().unwrap_or(0.0);
        tie += p * pj_k;
        win += p * cdf_j;
        cdf_j += pj_k;
    }
    [(1.0 - win - tie).max(0.0), tie, win]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_values() {
        let l = Likelihood::Probit;
        assert!((l.log_pdf(Outcome::WIN, 0.0).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        let l = Likelihood::Logit;
        assert!((l.log_pdf(Outcome::LOSS, 0.0).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        let l = Likelihood::PoissonExp;
        assert!((l.log_pdf(Outcome::Count(0), 0.0).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_closed_forms() {
        let l = Likelihood::gaussian(1.0).unwrap();
        let ep = l.ep_derivatives(Outcome::Real(1.0), 0.0, 1.0).unwrap();
        let want = -0.5 * (2.0 * std::f64::consts::PI * 2.0).ln() - 0.25;
        assert!((ep.value - want).abs() < 1e-14);
        assert!((ep.d1 - 0.5).abs() < 1e-15 && (ep.d2 + 0.5).abs() < 1e-15);
        let kl = l.kl_derivatives(Outcome::Real(0.0), 0.0, 1.0).unwrap();
        assert!((kl.value - (-0.5 * LN_2PI - 0.5)).abs() < 1e-14);
        assert_eq!((kl.d1, kl.d2), (0.0, -1.0));
    }

    #[test]
    fn outcome_space_checked() {
        assert!(Likelihood::Probit.log_pdf(Outcome::TIE, 0.0).is_err());
        assert!(Likelihood::PoissonExp.log_pdf(Outcome::WIN, 0.0).is_err());
        assert!(Likelihood::ordinal_probit(0.3).unwrap().log_pdf(Outcome::TIE, 0.0).is_ok());
    }

    #[test]
    fn json_roundtrip_and_errors() {
        let l: Likelihood =
            serde_json::from_str(r#"{"likelihood": "ordinal_probit", "draw_margin": 0.372}"#).unwrap();
        assert_eq!(l, Likelihood::OrdinalProbit { draw_margin: 0.372 });
        let back: Likelihood = serde_json::from_str(&serde_json::to_string(&l).unwrap()).unwrap();
        assert_eq!(back, l);
        let e = Likelihood::from_json(r#"{"likelihood": "probit", "draw_margin": 1}"#).unwrap_err();
        assert!(e.contains("draw_margin"), "{e}");
        let e = Likelihood::from_json(r#"{"likelihood": "gaussian"}"#).unwrap_err();
        assert!(e.contains("obs_noise"), "{e}");
        let e = Likelihood::from_json(r#"{"likelihood": "gaussian", "obs_noise": -1}"#).unwrap_err();
        assert!(e.contains("obs_noise"), "{e}");
        assert!(Likelihood::from_json(r#"{"likelihood": "probit", "extra": 1}"#).is_err());
    }

    #[test]
    fn ordinal_probs_sum_to_one() {
        for lik in [
            Likelihood::Probit,
            Likelihood::Logit,
            Likelihood::ordinal_probit(0.4).unwrap(),
            Likelihood::ordinal_logit(0.6).unwrap(),
            Likelihood::PoissonExp,
            Likelihood::gaussian(2.0).unwrap(),
        ] {
            for ties in [false, true] {
                for &(m, v) in &[(0.0, 0.0), (1.3, 0.4), (-2.0, 3.0)] {
                    let p = lik.outcome_probs(m, v, ties);
                    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12, "{lik:?}");
                    assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
                }
            }
        }
    }

    #[test]
    fn tie_probability_at_table_margin() {
        let l = Likelihood::ordinal_probit(0.372).unwrap();
        let p = l.outcome_probs(0.0, 0.0, true);
        // var 0 still carries the unit probit noise
        let want = 1.0 - 2.0 * norm_cdf(-0.372);
        assert!((p[1] - want).abs() < 1e-12);
    }

    #[test]
    fn poisson_race_symmetric() {
        let p = poisson_race(1.7, 1.7);
        assert!((p[0] - p[2]).abs() < 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-11);
    }
}
