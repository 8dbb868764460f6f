//! Seeded random search over hyperparameter spaces.
//!
//! A space is a JSON document shaped like the configuration being searched,
//! where any value may be replaced by a distribution:
//! `{"uniform": [lo, hi]}`, `{"log_uniform": [lo, hi]}` or `{"choice": [..]}`.
//! Model spaces describe a [`ModelTemplate`]; Elo spaces are `{"elo": {..}}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::dataset::{MatchRecord, Schema};
use super::elo::{elo_train_log_loss, EloConfig};
use super::template::ModelTemplate;
use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchEntry {
    pub rank: usize,
    /// Position in the sampling sequence.
    pub index: usize,
    pub config: Value,
    /// Log-marginal likelihood, or minus the one-pass train log loss for Elo.
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn bounds(v: &Value, what: &str) -> Result<(f64, f64), EvalError> {
    let pair = v
        .as_array()
        .filter(|a| a.len() == 2)
        .and_then(|a| Some((a[0].as_f64()?, a[1].as_f64()?)))
        .ok_or_else(|| EvalError::Config(format!("{what} expects [lo, hi]")))?;
    if !(pair.0 <= pair.1) || !pair.0.is_finite() || !pair.1.is_finite() {
        return Err(EvalError::Config(format!("{what} bounds must satisfy lo <= hi")));
    }
    Ok(pair)
}

fn distribution(map: &Map<String, Value>) -> Option<(&str, &Value)> {
    if map.len() != 1 {
        return None;
    }
    let (k, v) = map.iter().next()?;
    matches!(k.as_str(), "uniform" | "log_uniform" | "choice").then_some((k.as_str(), v))
}

/// Checks every distribution in a space without sampling it.
pub fn validate_space(space: &Value) -> Result<(), EvalError> {
    match space {
        Value::Object(map) => match distribution(map) {
            Some(("uniform", v)) => bounds(v, "uniform").map(|_| ()),
            Some(("log_uniform", v)) => {
                let (lo, _) = bounds(v, "log_uniform")?;
                if lo <= 0.0 {
                    return Err(EvalError::Config("log_uniform bounds must be positive".into()));
                }
                Ok(())
            }
            Some((_, v)) => match v.as_array() {
                Some(items) if !items.is_empty() => items.iter().try_for_each(validate_space),
                _ => Err(EvalError::Config("choice expects a nonempty list".into())),
            },
            None => map.values().try_for_each(validate_space),
        },
        Value::Array(items) => items.iter().try_for_each(validate_space),
        _ => Ok(()),
    }
}

/// Draws one configuration. Object keys are visited in sorted order.
pub fn sample_space(space: &Value, rng: &mut ChaCha8Rng) -> Value {
    match space {
        Value::Object(map) => match distribution(map) {
            Some(("uniform", v)) => {
                let (lo, hi) = bounds(v, "uniform").expect("validated");
                Value::from(lo + (hi - lo) * rng.random::<f64>())
            }
            Some(("log_uniform", v)) => {
                let (lo, hi) = bounds(v, "log_uniform").expect("validated");
                let (a, b) = (lo.ln(), hi.ln());
                Value::from((a + (b - a) * rng.random::<f64>()).exp())
            }
            Some((_, v)) => {
                let items = v.as_array().expect("validated");
                let pick = rng.random_range(0..items.len());
                sample_space(&items[pick], rng)
            }
            None => Value::Object(
                map.iter()
                    .map(|(k, v)| (k.clone(), sample_space(v, rng)))
                    .collect(),
            ),
        },
        Value::Array(items) => Value::Array(items.iter().map(|v| sample_space(v, rng)).collect()),
        other => other.clone(),
    }
}

enum Outcome {
    Scored { score: f64, converged: Option<bool>, iterations: Option<usize> },
    Failed(String),
}

fn evaluate_model(config: &Value, train: &[MatchRecord], schema: &Schema) -> Outcome {
    let template: ModelTemplate = match serde_json::from_value(config.clone()) {
        Ok(t) => t,
        Err(e) => return Outcome::Failed(format!("invalid template: {e}")),
    };
    let mut model = match template.build(train, schema) {
        Ok(m) => m,
        Err(e) => return Outcome::Failed(e.to_string()),
    };
    match model.fit(&template.fit) {
        Ok(report) if report.final_log_marginal().is_finite() => Outcome::Scored {
            score: report.final_log_marginal(),
            converged: Some(report.converged),
            iterations: Some(report.iterations),
        },
        Ok(_) => Outcome::Failed("objective is not finite".into()),
        Err(e) => Outcome::Failed(e.to_string()),
    }
}

fn evaluate_elo(config: &Value, train: &[MatchRecord], schema: &Schema) -> Outcome {
    let elo: EloConfig = match serde_json::from_value(config.clone()) {
        Ok(c) => c,
        Err(e) => return Outcome::Failed(format!("invalid elo config: {e}")),
    };
    match elo_train_log_loss(train, schema, &elo) {
        Ok(ll) => Outcome::Scored {
            score: -ll,
            converged: None,
            iterations: None,
        },
        Err(e) => Outcome::Failed(e.to_string()),
    }
}

/// Samples `n` configurations from `space` with `seed`, fits each on `train`
/// in parallel and ranks them best first. Failed fits rank last.
pub fn random_search(
    space: &Value,
    n: usize,
    seed: u64,
    train: &[MatchRecord],
    schema: &Schema,
) -> Result<Vec<SearchEntry>, EvalError> {
    validate_space(space)?;
    let elo_space = space.as_object().and_then(|m| (m.len() == 1).then(|| m.get("elo")).flatten());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let configs: Vec<Value> = (0..n)
        .map(|_| sample_space(elo_space.unwrap_or(space), &mut rng))
        .collect();
    let outcomes: Vec<Outcome> = configs
        .par_iter()
        .map(|c| match elo_space {
            Some(_) => evaluate_elo(c, train, schema),
            None => evaluate_model(c, train, schema),
        })
        .collect();
    let mut entries: Vec<SearchEntry> = configs
        .into_iter()
        .zip(outcomes)
        .enumerate()
        .map(|(index, (config, outcome))| {
            let config = match elo_space {
                Some(_) => serde_json::json!({ "elo": config }),
                None => config,
            };
            match outcome {
                Outcome::Scored {
                    score,
                    converged,
                    iterations,
                } => SearchEntry {
                    rank: 0,
                    index,
                    config,
                    score: Some(score),
                    converged,
                    iterations,
                    error: None,
                },
                Outcome::Failed(error) => SearchEntry {
                    rank: 0,
                    index,
                    config,
                    score: None,
                    converged: None,
                    iterations: None,
                    error: Some(error),
                },
            }
        })
        .collect();
    entries.sort_by(|a, b| match (a.score, b.score) {
        (Some(x), Some(y)) => y.total_cmp(&x).then(a.index.cmp(&b.index)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.index.cmp(&b.index),
    });
    for (rank, e) in entries.iter_mut().enumerate() {
        e.rank = rank + 1;
    }
    Ok(entries)
}
