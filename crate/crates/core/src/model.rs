//! Feature registry, observations, prediction and snapshots.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::{self, FitConfig, FitError, FitReport, Objective};
use crate::kernels::{Kernel, KernelError};
use crate::likelihoods::{Likelihood, LikelihoodError, Outcome, OutcomeSpace};
use crate::statespace::{ChainError, FeatureChain};

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("feature `{0}` is already declared")]
    DuplicateFeature(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("observation has no nonzero coefficients")]
    EmptyCoefficients,
    #[error("coefficient for `{id}` is not finite ({value})")]
    NonFiniteCoefficient { id: String, value: f64 },
    #[error("time must be finite (got {0})")]
    NonFiniteTime(f64),
    #[error("observation at {time} precedes the last recorded observation at {last}")]
    OutOfOrder { time: f64, last: f64 },
    #[error(transparent)]
    Outcome(#[from] LikelihoodError),
    #[error("kernel of feature `{id}`: {source}")]
    Kernel { id: String, source: KernelError },
    #[error("feature `{id}`: {source}")]
    Chain { id: String, source: ChainError },
    #[error("posterior is out of date; fit or refresh the model first")]
    Stale,
    #[error("unsupported snapshot format version {0}")]
    SnapshotVersion(u32),
    #[error("snapshot is inconsistent: {0}")]
    Snapshot(String),
}

#[derive(Debug, Clone)]
pub(crate) struct Feature {
    pub(crate) id: String,
    pub(crate) kernel: Kernel,
    pub(crate) chain: Option<FeatureChain>,
    /// `(observation, term)` owning each chain node.
    pub(crate) nodes: Vec<(u32, u32)>,
}

/// One feature's share of an observation, with its pseudo-observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub(crate) feature: u32,
    pub(crate) node: u32,
    pub(crate) coeff: f64,
    pub(crate) alpha: f64,
    pub(crate) beta: f64,
    pub(crate) pending: (f64, f64),
}

impl Term {
    pub fn feature(&self) -> usize {
        self.feature as usize
    }

    pub fn coeff(&self) -> f64 {
        self.coeff
    }

    /// Natural parameters `(α̃, β̃)` of the pseudo-observation.
    pub fn site(&self) -> (f64, f64) {
        (self.alpha, self.beta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub(crate) time: f64,
    pub(crate) outcome: Outcome,
    pub(crate) terms: Vec<Term>,
}

impl Observation {
    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn outcome(&self) -> Outcome {
        self.outcome
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }
}

/// Predictive distribution of one comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    /// Mean and variance of the score difference.
    pub mean: f64,
    pub var: f64,
    /// `[p(loss), p(tie), p(win)]` for the positive side.
    pub probs: [f64; 3],
}

impl Prediction {
    pub fn p_win(&self) -> f64 {
        self.probs[2]
    }

    pub fn p_tie(&self) -> f64 {
        self.probs[1]
    }

    pub fn p_loss(&self) -> f64 {
        self.probs[0]
    }

    /// Probability of an ordinal outcome.
    pub fn prob(&self, y: Outcome) -> Option<f64> {
        match y {
            Outcome::Ordinal(v) if (-1..=1).contains(&v) => Some(self.probs[(v + 1) as usize]),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub mean: f64,
    pub std: f64,
}

/// Declarative model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub likelihood: Likelihood,
    pub features: Vec<FeatureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub id: String,
    pub kernel: Kernel,
}

/// Canonical id of the interaction feature between `a` and `b`.
pub fn interaction_id(a: &str, b: &str) -> String {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    format!("{lo}~{hi}")
}

#[derive(Debug, Clone)]
pub struct Model {
    pub(crate) likelihood: Likelihood,
    pub(crate) epoch: Option<f64>,
    pub(crate) ties: bool,
    pub(crate) joseph: bool,
    pub(crate) features: Vec<Feature>,
    pub(crate) index: HashMap<String, usize>,
    pub(crate) observations: Vec<Observation>,
    pub(crate) smoothed: bool,
    pub(crate) report: Option<FitReport>,
    pub(crate) objective: Objective,
}

impl Model {
    pub fn new(likelihood: Likelihood) -> Self {
        Self {
            likelihood,
            epoch: None,
            ties: likelihood.outcome_space() == OutcomeSpace::Ternary,
            joseph: false,
            features: Vec::new(),
            index: HashMap::new(),
            observations: Vec::new(),
            smoothed: true,
            report: None,
            objective: Objective::Ep,
        }
    }

    /// Fixes the time origin instead of taking the first observation's time.
    pub fn with_epoch(mut self, epoch: f64) -> Self {
        assert!(self.epoch.is_none(), "epoch already fixed");
        self.epoch = Some(epoch);
        self
    }

    pub fn from_spec(spec: &ModelSpec) -> Result<Self, ModelError> {
        let mut model = Model::new(spec.likelihood);
        if let Some(e) = spec.epoch {
            if !e.is_finite() {
                return Err(ModelError::NonFiniteTime(e));
            }
            model = model.with_epoch(e);
        }
        for f in &spec.features {
            model.add_feature(&f.id, f.kernel.clone())?;
        }
        Ok(model)
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            likelihood: self.likelihood,
            features: self
                .features
                .iter()
                .map(|f| FeatureSpec {
                    id: f.id.clone(),
                    kernel: f.kernel.clone(),
                })
                .collect(),
            epoch: self.epoch,
        }
    }

    /// Whether count and real likelihoods should predict ties.
    pub fn set_ties(&mut self, ties: bool) {
        self.ties = ties;
    }

    pub fn ties(&self) -> bool {
        self.ties
    }

    pub fn likelihood(&self) -> Likelihood {
        self.likelihood
    }

    pub fn epoch(&self) -> Option<f64> {
        self.epoch
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn feature_ids(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.id.as_str())
    }

    pub fn has_feature(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn kernel(&self, id: &str) -> Option<&Kernel> {
        self.index.get(id).map(|&i| &self.features[i].kernel)
    }

    pub fn report(&self) -> Option<&FitReport> {
        self.report.as_ref()
    }

    /// Whether every chain reflects the current observations and sites.
    pub fn is_smoothed(&self) -> bool {
        self.smoothed
    }

    fn build_chain(&self, id: &str, kernel: &Kernel, epoch: f64) -> Result<FeatureChain, ModelError> {
        let space = kernel.to_state_space(epoch).map_err(|source| ModelError::Kernel {
            id: id.to_string(),
            source,
        })?;
        Ok(FeatureChain::new(Arc::new(space)).with_joseph(self.joseph))
    }

    pub fn add_feature(&mut self, id: &str, kernel: Kernel) -> Result<(), ModelError> {
        if self.index.contains_key(id) {
            return Err(ModelError::DuplicateFeature(id.to_string()));
        }
        kernel.validate().map_err(|source| ModelError::Kernel {
            id: id.to_string(),
            source,
        })?;
        // reject product kernels up front
        kernel.to_state_space(0.0).map_err(|source| ModelError::Kernel {
            id: id.to_string(),
            source,
        })?;
        let chain = match self.epoch {
            Some(e) => Some(self.build_chain(id, &kernel, e)?),
            None => None,
        };
        self.index.insert(id.to_string(), self.features.len());
        self.features.push(Feature {
            id: id.to_string(),
            kernel,
            chain,
            nodes: Vec::new(),
        });
        Ok(())
    }

    /// Adds a feature unless one with this id exists.
    pub fn ensure_feature(&mut self, id: &str, kernel: &Kernel) -> Result<(), ModelError> {
        if self.has_feature(id) {
            return Ok(());
        }
        self.add_feature(id, kernel.clone())
    }

    /// Uses the Joseph-form covariance update in every chain.
    pub fn set_joseph(&mut self, joseph: bool) {
        self.joseph = joseph;
        for f in &mut self.features {
            if let Some(c) = f.chain.as_mut() {
                c.set_joseph(joseph);
            }
        }
    }

    fn fix_epoch(&mut self, epoch: f64) -> Result<(), ModelError> {
        self.epoch = Some(epoch);
        for i in 0..self.features.len() {
            let chain = self.build_chain(&self.features[i].id, &self.features[i].kernel, epoch)?;
            self.features[i].chain = Some(chain);
        }
        Ok(())
    }

    /// Folds coefficients by feature index: duplicates add up, zeros vanish.
    fn fold<S: AsRef<str>>(
        &self,
        coeffs: impl IntoIterator<Item = (S, f64)>,
    ) -> Result<Vec<(usize, f64)>, ModelError> {
        let mut folded: Vec<(usize, f64)> = Vec::new();
        for (id, x) in coeffs {
            let id = id.as_ref();
            if !x.is_finite() {
                return Err(ModelError::NonFiniteCoefficient {
                    id: id.to_string(),
                    value: x,
                });
            }
            let &f = self
                .index
                .get(id)
                .ok_or_else(|| ModelError::UnknownFeature(id.to_string()))?;
            match folded.iter_mut().find(|(g, _)| *g == f) {
                Some(slot) => slot.1 += x,
                None => folded.push((f, x)),
            }
        }
        folded.retain(|&(_, x)| x != 0.0);
        Ok(folded)
    }

    /// Records an outcome for the combination `Σ coeff · feature` at `time`.
    /// Times must be nondecreasing across calls.
    pub fn observe<S: AsRef<str>>(
        &mut self,
        coeffs: impl IntoIterator<Item = (S, f64)>,
        time: f64,
        outcome: Outcome,
    ) -> Result<usize, ModelError> {
        if !time.is_finite() {
            return Err(ModelError::NonFiniteTime(time));
        }
        if let Some(last) = self.observations.last() {
            if time < last.time {
                return Err(ModelError::OutOfOrder {
                    time,
                    last: last.time,
                });
            }
        }
        self.likelihood.check_outcome(outcome)?;
        let folded = self.fold(coeffs)?;
        if folded.is_empty() {
            return Err(ModelError::EmptyCoefficients);
        }
        if self.epoch.is_none() {
            self.fix_epoch(time)?;
        }
        let n = self.observations.len();
        let mut terms = Vec::with_capacity(folded.len());
        for (k, (f, x)) in folded.into_iter().enumerate() {
            let feature = &mut self.features[f];
            let chain = feature.chain.as_mut().expect("chains exist once the epoch is fixed");
            let node = chain.push(time).map_err(|source| ModelError::Chain {
                id: feature.id.clone(),
                source,
            })?;
            feature.nodes.push((n as u32, k as u32));
            terms.push(Term {
                feature: f as u32,
                node: node as u32,
                coeff: x,
                alpha: 0.0,
                beta: 0.0,
                pending: (0.0, 0.0),
            });
        }
        self.observations.push(Observation {
            time,
            outcome,
            terms,
        });
        self.smoothed = false;
        Ok(n)
    }

    /// Records many observations, sorting them by time first (stable).
    pub fn observe_all<S: AsRef<str>>(
        &mut self,
        mut batch: Vec<(Vec<(S, f64)>, f64, Outcome)>,
    ) -> Result<(), ModelError> {
        batch.sort_by(|a, b| a.1.total_cmp(&b.1));
        for (coeffs, t, y) in batch {
            self.observe(coeffs, t, y)?;
        }
        Ok(())
    }

    /// Runs approximate inference, warm-starting from the current
    /// pseudo-observations.
    pub fn fit(&mut self, config: &FitConfig) -> Result<FitReport, FitError> {
        inference::fit(self, config)
    }

    /// Re-smooths every chain against the current pseudo-observations.
    pub fn refresh(&mut self) -> Result<(), ModelError> {
        let observations = &self.observations;
        self.features
            .par_iter_mut()
            .try_for_each(|f| inference::resmooth(f, observations))
            .map_err(|(id, source)| ModelError::Chain { id, source })?;
        self.smoothed = true;
        Ok(())
    }

    fn ensure_smoothed(&self) -> Result<(), ModelError> {
        if self.smoothed {
            Ok(())
        } else {
            Err(ModelError::Stale)
        }
    }

    /// Posterior marginal `(mean, var)` of one feature's score at `t`.
    pub fn marginal_at(&self, id: &str, t: f64) -> Result<(f64, f64), ModelError> {
        let &f = self
            .index
            .get(id)
            .ok_or_else(|| ModelError::UnknownFeature(id.to_string()))?;
        self.feature_marginal(f, t)
    }

    fn feature_marginal(&self, f: usize, t: f64) -> Result<(f64, f64), ModelError> {
        self.ensure_smoothed()?;
        let feature = &self.features[f];
        match &feature.chain {
            Some(chain) => chain.posterior_at(t).map_err(|source| ModelError::Chain {
                id: feature.id.clone(),
                source,
            }),
            None => {
                let s = t - self.epoch.unwrap_or(t);
                Ok((0.0, feature.kernel.evaluate(s, s)))
            }
        }
    }

    /// Mean and variance of `Σ coeff · s(t)` under the factorized posterior.
    pub fn score_difference<S: AsRef<str>>(
        &self,
        coeffs: impl IntoIterator<Item = (S, f64)>,
        t: f64,
    ) -> Result<(f64, f64), ModelError> {
        if !t.is_finite() {
            return Err(ModelError::NonFiniteTime(t));
        }
        let folded = self.fold(coeffs)?;
        let (mut mean, mut var) = (0.0, 0.0);
        for (f, x) in folded {
            let (m, v) = self.feature_marginal(f, t)?;
            mean += x * m;
            var += x * x * v;
        }
        Ok((mean, var))
    }

    /// Outcome probabilities for the comparison `Σ coeff · feature` at `t`.
    pub fn predict<S: AsRef<str>>(
        &self,
        coeffs: impl IntoIterator<Item = (S, f64)>,
        t: f64,
    ) -> Result<Prediction, ModelError> {
        let (mean, var) = self.score_difference(coeffs, t)?;
        Ok(Prediction {
            mean,
            var,
            probs: self.likelihood.outcome_probs(mean, var, self.ties),
        })
    }

    /// Log predictive density `log ∫ p(y | d) q(d) dd` of a raw outcome.
    pub fn predictive_log_prob<S: AsRef<str>>(
        &self,
        coeffs: impl IntoIterator<Item = (S, f64)>,
        t: f64,
        y: Outcome,
    ) -> Result<f64, ModelError> {
        let (mean, var) = self.score_difference(coeffs, t)?;
        Ok(self.likelihood.ep_derivatives(y, mean, var)?.value)
    }

    /// Posterior mean and standard deviation of a feature's score on `grid`.
    pub fn trajectory(&self, id: &str, grid: &[f64]) -> Result<Vec<TrajectoryPoint>, ModelError> {
        let &f = self
            .index
            .get(id)
            .ok_or_else(|| ModelError::UnknownFeature(id.to_string()))?;
        grid.iter()
            .map(|&t| {
                let (mean, var) = self.feature_marginal(f, t)?;
                Ok(TrajectoryPoint {
                    t,
                    mean,
                    std: var.sqrt(),
                })
            })
            .collect()
    }

    /// Log-marginal likelihood estimate of the observed data.
    pub fn log_marginal(&self) -> Result<f64, ModelError> {
        self.ensure_smoothed()?;
        Ok(inference::objective_value(self, Objective::Ep))
    }

    /// Evidence lower bound of the current posterior.
    pub fn elbo(&self) -> Result<f64, ModelError> {
        self.ensure_smoothed()?;
        Ok(inference::objective_value(self, Objective::ReverseKl))
    }

    /// The quantity maximized by the objective of the last fit.
    pub fn objective_value(&self) -> Result<f64, ModelError> {
        self.ensure_smoothed()?;
        Ok(inference::objective_value(self, self.objective))
    }

    pub fn snapshot(&self, config: Option<&FitConfig>) -> Snapshot {
        Snapshot {
            format_version: SNAPSHOT_VERSION,
            spec: self.spec(),
            ties: self.ties,
            config: config.cloned(),
            observations: self
                .observations
                .iter()
                .map(|o| SnapshotObservation {
                    time: o.time,
                    outcome: o.outcome,
                    coeffs: o
                        .terms
                        .iter()
                        .map(|t| (self.features[t.feature as usize].id.clone(), t.coeff))
                        .collect(),
                    sites: o.terms.iter().map(|t| (t.alpha, t.beta)).collect(),
                })
                .collect(),
            report: self.report.clone(),
        }
    }

    /// Rebuilds a model from a snapshot and re-smooths it.
    pub fn from_snapshot(snapshot: &Snapshot) -> Result<Self, ModelError> {
        if snapshot.format_version != SNAPSHOT_VERSION {
            return Err(ModelError::SnapshotVersion(snapshot.format_version));
        }
        let mut model = Model::from_spec(&snapshot.spec)?;
        model.ties = snapshot.ties;
        if let Some(c) = &snapshot.config {
            model.objective = c.objective;
            model.set_joseph(c.joseph);
        }
        for o in &snapshot.observations {
            if o.coeffs.len() != o.sites.len() {
                return Err(ModelError::Snapshot(format!(
                    "observation at {} has {} coefficients but {} sites",
                    o.time,
                    o.coeffs.len(),
                    o.sites.len()
                )));
            }
            let n = model.observe(o.coeffs.iter().map(|(id, x)| (id.as_str(), *x)), o.time, o.outcome)?;
            let terms = &mut model.observations[n].terms;
            if terms.len() != o.sites.len() {
                return Err(ModelError::Snapshot(format!(
                    "observation at {} has repeated or zero coefficients",
                    o.time
                )));
            }
            for (t, &(a, b)) in terms.iter_mut().zip(&o.sites) {
                if !(a.is_finite() && b.is_finite() && b >= 0.0) {
                    return Err(ModelError::Snapshot(format!("invalid site ({a}, {b})")));
                }
                t.alpha = a;
                t.beta = b;
            }
        }
        model.report = snapshot.report.clone();
        model.refresh()?;
        Ok(model)
    }
}

/// Everything needed to rebuild a fitted model deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub ties: bool,
    #[serde(default)]
    pub config: Option<FitConfig>,
    pub observations: Vec<SnapshotObservation>,
    #[serde(default)]
    pub report: Option<FitReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotObservation {
    pub time: f64,
    pub outcome: Outcome,
    pub coeffs: Vec<(String, f64)>,
    pub sites: Vec<(f64, f64)>,
}
