//! Match datasets, the chronological evaluation protocol, baselines and
//! hyperparameter search.

mod dataset;
mod elo;
mod protocol;
mod search;
pub mod synthetic;
mod template;

use thiserror::Error;

pub use dataset::{
    parse_dataset, parse_reader, parse_timestamp, write_csv, DataError, Dataset, MatchRecord, Schema, Source,
    TimeUnit, SECONDS_PER_DAY, SECONDS_PER_YEAR,
};
pub use elo::{elo_baseline, elo_train_log_loss, Elo, EloConfig};
pub use protocol::{
    chronological_split, outcome_index, random_baseline, rolling_evaluate, rolling_evaluate_with, EvalResult,
    FitSummary, RecordPrediction, MIN_PROB,
};
pub use search::{random_search, sample_space, validate_space, SearchEntry};
pub use template::{ModelTemplate, FIRST_MOVER_FEATURE, HOME_FEATURE};

use crate::inference::FitError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("line {line}: {message}")]
    Record { line: u64, message: String },
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Config(String),
}
