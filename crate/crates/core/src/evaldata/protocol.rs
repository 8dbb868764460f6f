//! Chronological split, rolling prediction and metrics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::dataset::{MatchRecord, Schema};
use super::template::ModelTemplate;
use super::EvalError;

/// Floor applied to predicted probabilities before taking logs.
pub const MIN_PROB: f64 = 1e-15;

/// First `⌈fraction · N⌉` records for training, the rest for testing.
pub fn chronological_split<T>(records: &[T], fraction: f64) -> (&[T], &[T]) {
    let fraction = fraction.clamp(0.0, 1.0);
    let cut = ((fraction * records.len() as f64).ceil() as usize).min(records.len());
    records.split_at(cut)
}

pub fn outcome_index(outcome: i8) -> usize {
    (outcome.clamp(-1, 1) + 1) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordPrediction {
    pub line: u64,
    pub timestamp: i64,
    pub comp_i: String,
    pub comp_j: String,
    pub outcome: i8,
    /// `[p(loss), p(tie), p(win)]` for `comp_i`.
    pub probs: [f64; 3],
}

impl RecordPrediction {
    pub fn new(record: &MatchRecord, probs: [f64; 3]) -> Self {
        Self {
            line: record.line,
            timestamp: record.timestamp,
            comp_i: record.comp_i.clone(),
            comp_j: record.comp_j.clone(),
            outcome: record.outcome,
            probs,
        }
    }

    pub fn log_loss(&self) -> f64 {
        -self.probs[outcome_index(self.outcome)].max(MIN_PROB).ln()
    }

    /// 1 for a correct argmax, split evenly among exactly tied maxima.
    pub fn accuracy(&self) -> f64 {
        let best = self.probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let winners = self.probs.iter().filter(|&&p| p == best).count();
        if self.probs[outcome_index(self.outcome)] == best {
            1.0 / winners as f64
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FitSummary {
    pub fits: usize,
    pub unconverged: usize,
    pub max_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub n: usize,
    /// Mean log loss in nats.
    pub log_loss: f64,
    pub accuracy: f64,
    #[serde(default)]
    pub fits: FitSummary,
    #[serde(skip)]
    pub predictions: Vec<RecordPrediction>,
}

impl EvalResult {
    /// Aggregates per-record predictions, summing in order.
    pub fn from_predictions(predictions: Vec<RecordPrediction>) -> Self {
        let n = predictions.len();
        let (mut ll, mut acc) = (0.0, 0.0);
        for p in &predictions {
            ll += p.log_loss();
            acc += p.accuracy();
        }
        let denom = n.max(1) as f64;
        Self {
            n,
            log_loss: ll / denom,
            accuracy: acc / denom,
            fits: FitSummary::default(),
            predictions,
        }
    }

    pub fn write_predictions<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["line", "t", "comp_i", "comp_j", "outcome", "p_loss", "p_tie", "p_win"])?;
        for p in &self.predictions {
            w.write_record([
                p.line.to_string(),
                p.timestamp.to_string(),
                p.comp_i.clone(),
                p.comp_j.clone(),
                p.outcome.to_string(),
                format!("{:?}", p.probs[0]),
                format!("{:?}", p.probs[1]),
                format!("{:?}", p.probs[2]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_predictions<R: std::io::Read>(reader: R) -> Result<Vec<RecordPrediction>, EvalError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut out = Vec::new();
        for row in rdr.records() {
            let row = row.map_err(|e| EvalError::Data(e.to_string()))?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            let bad = |what: &str| EvalError::Record {
                line,
                message: format!("bad {what}"),
            };
            let num = |i: usize, what: &str| row.get(i).and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| bad(what));
            out.push(RecordPrediction {
                line: row.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("line"))?,
                timestamp: row.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad("t"))?,
                comp_i: row.get(2).ok_or_else(|| bad("comp_i"))?.to_string(),
                comp_j: row.get(3).ok_or_else(|| bad("comp_j"))?.to_string(),
                outcome: row.get(4).and_then(|s| s.parse().ok()).ok_or_else(|| bad("outcome"))?,
                probs: [num(5, "p_loss")?, num(6, "p_tie")?, num(7, "p_win")?],
            });
        }
        Ok(out)
    }
}

/// Uniform predictor over the schema's outcomes.
pub fn random_baseline(test: &[MatchRecord], schema: &Schema) -> EvalResult {
    let probs = if schema.ties {
        [1.0 / 3.0; 3]
    } else {
        [0.5, 0.0, 0.5]
    };
    EvalResult::from_predictions(test.iter().map(|r| RecordPrediction::new(r, probs)).collect())
}

/// Predicts every test record from a model fitted on all records dated
/// strictly before its day. Each day's fit warm-starts from the previous one.
pub fn rolling_evaluate(
    template: &ModelTemplate,
    records: &[MatchRecord],
    schema: &Schema,
    train_fraction: f64,
) -> Result<EvalResult, EvalError> {
    rolling_evaluate_with(template, records, schema, train_fraction, |_, _| {})
}

/// Like [`rolling_evaluate`], reporting `(day, fit report)` after each refit.
pub fn rolling_evaluate_with<F>(
    template: &ModelTemplate,
    records: &[MatchRecord],
    schema: &Schema,
    train_fraction: f64,
    mut on_fit: F,
) -> Result<EvalResult, EvalError>
where
    F: FnMut(i64, &crate::inference::FitReport),
{
    if records.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
        return Err(EvalError::Data("records must be sorted by timestamp".into()));
    }
    let (train, test) = chronological_split(records, train_fraction);
    let mut model = template.empty_model(schema)?;
    let mut added = 0;
    let mut dirty = false;
    let mut summary = FitSummary::default();
    let mut predictions = Vec::with_capacity(test.len());
    let offset = train.len();
    let mut k = 0;
    while k < test.len() {
        let day = test[k].day();
        let end = k + test[k..].iter().take_while(|r| r.day() == day).count();
        while added < records.len() && records[added].day() < day {
            template.add_record(&mut model, &records[added], schema)?;
            added += 1;
            dirty = true;
        }
        debug_assert!(added <= offset + k);
        if dirty {
            let report = model.fit(&template.fit)?;
            summary.fits += 1;
            summary.unconverged += usize::from(!report.converged);
            summary.max_iterations = summary.max_iterations.max(report.iterations);
            on_fit(day, &report);
            dirty = false;
        }
        for r in &test[k..end] {
            let probs = template.predict(&mut model, r, schema)?;
            predictions.push(RecordPrediction::new(r, probs));
        }
        k = end;
    }
    let mut result = EvalResult::from_predictions(predictions);
    result.fits = summary;
    Ok(result)
}
