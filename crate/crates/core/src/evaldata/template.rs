//! Turning match records into model observations.

use serde::{Deserialize, Serialize};

use super::dataset::{MatchRecord, Schema};
use super::EvalError;
use crate::inference::FitConfig;
use crate::kernels::Kernel;
use crate::likelihoods::{Likelihood, Outcome};
use crate::model::{interaction_id, FeatureSpec, Model};

pub const HOME_FEATURE: &str = "@home";
pub const FIRST_MOVER_FEATURE: &str = "@first_mover";

/// Recipe for a model over a dataset's competitors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelTemplate {
    pub likelihood: Likelihood,
    /// Kernel of every competitor's score.
    pub competitor: Kernel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub home_advantage: Option<Kernel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_mover: Option<Kernel>,
    /// Kernel of the per-pair interaction features.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interaction: Option<Kernel>,
    /// Kernels for specific competitor ids, overriding `competitor`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub features: Vec<FeatureSpec>,
    #[serde(default)]
    pub fit: FitConfig,
}

impl ModelTemplate {
    pub fn new(likelihood: Likelihood, competitor: Kernel) -> Self {
        Self {
            likelihood,
            competitor,
            home_advantage: None,
            first_mover: None,
            interaction: None,
            features: Vec::new(),
            fit: FitConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// A model with the global features declared and no competitors yet.
    pub fn empty_model(&self, schema: &Schema) -> Result<Model, EvalError> {
        let mut model = Model::new(self.likelihood);
        model.set_ties(schema.ties);
        if let Some(k) = &self.home_advantage {
            model.add_feature(HOME_FEATURE, k.clone())?;
        }
        if let Some(k) = &self.first_mover {
            model.add_feature(FIRST_MOVER_FEATURE, k.clone())?;
        }
        for f in &self.features {
            model.add_feature(&f.id, f.kernel.clone())?;
        }
        Ok(model)
    }

    fn pair_feature(i: &str, j: &str) -> (String, f64) {
        let id = format!("@{}", interaction_id(i, j));
        (id, if i <= j { 1.0 } else { -1.0 })
    }

    /// Declares any features `record` needs that the model lacks.
    pub fn ensure_features(&self, model: &mut Model, record: &MatchRecord) -> Result<(), EvalError> {
        for c in [&record.comp_i, &record.comp_j] {
            model.ensure_feature(c, &self.competitor)?;
        }
        if let Some(k) = &self.interaction {
            model.ensure_feature(&Self::pair_feature(&record.comp_i, &record.comp_j).0, k)?;
        }
        Ok(())
    }

    /// Folded coefficients of `comp_i` against `comp_j`.
    pub fn coeffs(&self, record: &MatchRecord) -> Vec<(String, f64)> {
        let mut c = vec![(record.comp_i.clone(), 1.0), (record.comp_j.clone(), -1.0)];
        if self.home_advantage.is_some() && record.home != 0 {
            c.push((HOME_FEATURE.to_string(), record.home as f64));
        }
        if self.first_mover.is_some() && record.first_mover != 0 {
            c.push((FIRST_MOVER_FEATURE.to_string(), record.first_mover as f64));
        }
        if self.interaction.is_some() {
            c.push(Self::pair_feature(&record.comp_i, &record.comp_j));
        }
        c
    }

    /// Observations contributed by one record: two for count likelihoods
    /// (each side's points), one otherwise.
    pub fn observations(&self, record: &MatchRecord) -> Result<Vec<(Vec<(String, f64)>, Outcome)>, EvalError> {
        let coeffs = self.coeffs(record);
        let need_points = || {
            record.points.ok_or_else(|| EvalError::Record {
                line: record.line,
                message: format!("the {} likelihood needs points", self.likelihood.name()),
            })
        };
        Ok(match self.likelihood {
            Likelihood::PoissonExp => {
                let (a, b) = need_points()?;
                let flipped = coeffs.iter().map(|(id, x)| (id.clone(), -x)).collect();
                vec![(coeffs, Outcome::Count(a)), (flipped, Outcome::Count(b))]
            }
            Likelihood::Gaussian { .. } => {
                let (a, b) = need_points()?;
                vec![(coeffs, Outcome::Real(a as f64 - b as f64))]
            }
            Likelihood::Probit | Likelihood::Logit if record.outcome == 0 => {
                return Err(EvalError::Record {
                    line: record.line,
                    message: format!("the {} likelihood cannot represent a tie", self.likelihood.name()),
                })
            }
            _ => vec![(coeffs, Outcome::Ordinal(record.outcome))],
        })
    }

    pub fn add_record(&self, model: &mut Model, record: &MatchRecord, schema: &Schema) -> Result<(), EvalError> {
        self.ensure_features(model, record)?;
        let t = schema.time(record.timestamp);
        for (coeffs, y) in self.observations(record)? {
            model.observe(coeffs, t, y)?;
        }
        Ok(())
    }

    /// Model over `records` (not fitted).
    pub fn build(&self, records: &[MatchRecord], schema: &Schema) -> Result<Model, EvalError> {
        let mut model = self.empty_model(schema)?;
        for r in records {
            self.add_record(&mut model, r, schema)?;
        }
        Ok(model)
    }

    /// `[p(loss), p(tie), p(win)]` for `comp_i`.
    pub fn predict(&self, model: &mut Model, record: &MatchRecord, schema: &Schema) -> Result<[f64; 3], EvalError> {
        self.ensure_features(model, record)?;
        Ok(model.predict(self.coeffs(record), schema.time(record.timestamp))?.probs)
    }
}
