//! Online Elo-style baseline: one gradient step on the log-likelihood per match.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::dataset::{MatchRecord, Schema};
use super::protocol::{chronological_split, EvalResult, RecordPrediction};
use super::EvalError;
use crate::likelihoods::{Likelihood, Outcome};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EloConfig {
    pub learning_rate: f64,
    /// Required when the schema has ties.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draw_margin: Option<f64>,
}

impl EloConfig {
    pub fn likelihood(&self, schema: &Schema) -> Result<Likelihood, EvalError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(EvalError::Config(format!(
                "elo learning_rate must be nonnegative (got {})",
                self.learning_rate
            )));
        }
        if schema.ties {
            let a = self.draw_margin.ok_or_else(|| {
                EvalError::Config("elo needs draw_margin on data with ties".into())
            })?;
            Likelihood::ordinal_logit(a).map_err(|e| EvalError::Config(e.to_string()))
        } else {
            Ok(Likelihood::Logit)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Elo {
    likelihood: Likelihood,
    lr: f64,
    ties: bool,
    scores: HashMap<String, f64>,
}

impl Elo {
    pub fn new(config: &EloConfig, schema: &Schema) -> Result<Self, EvalError> {
        Ok(Self {
            likelihood: config.likelihood(schema)?,
            lr: config.learning_rate,
            ties: schema.ties,
            scores: HashMap::new(),
        })
    }

    pub fn score(&self, id: &str) -> f64 {
        self.scores.get(id).copied().unwrap_or(0.0)
    }

    pub fn predict(&self, i: &str, j: &str) -> [f64; 3] {
        self.likelihood
            .outcome_probs(self.score(i) - self.score(j), 0.0, self.ties)
    }

    /// `s_i += λ g`, `s_j −= λ g` with `g` the slope of the log-likelihood at
    /// the current difference.
    pub fn update(&mut self, i: &str, j: &str, outcome: i8) -> Result<(), EvalError> {
        let d = self.score(i) - self.score(j);
        let (g, _) = self
            .likelihood
            .log_pdf_derivatives(Outcome::Ordinal(outcome), d)
            .map_err(|e| EvalError::Data(e.to_string()))?;
        *self.scores.entry(i.to_string()).or_insert(0.0) += self.lr * g;
        *self.scores.entry(j.to_string()).or_insert(0.0) -= self.lr * g;
        Ok(())
    }
}

/// Runs over all records, predicting each before learning from it; the
/// result covers the records after the training fraction.
pub fn elo_baseline(
    records: &[MatchRecord],
    schema: &Schema,
    config: &EloConfig,
    train_fraction: f64,
) -> Result<EvalResult, EvalError> {
    let (train, _) = chronological_split(records, train_fraction);
    let mut elo = Elo::new(config, schema)?;
    let mut predictions = Vec::new();
    for (k, r) in records.iter().enumerate() {
        if k >= train.len() {
            predictions.push(RecordPrediction::new(r, elo.predict(&r.comp_i, &r.comp_j)));
        }
        elo.update(&r.comp_i, &r.comp_j, r.outcome)?;
    }
    Ok(EvalResult::from_predictions(predictions))
}

/// Mean one-pass log loss over `records`, each predicted before its update.
pub fn elo_train_log_loss(records: &[MatchRecord], schema: &Schema, config: &EloConfig) -> Result<f64, EvalError> {
    Ok(elo_baseline(records, schema, config, 0.0)?.log_loss)
}
