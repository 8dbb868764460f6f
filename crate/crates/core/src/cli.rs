//! Command-line front end.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaldata::{
    self, chronological_split, elo_baseline, parse_dataset, random_baseline, random_search, rolling_evaluate_with,
    EloConfig, EvalError, EvalResult, MatchRecord, ModelTemplate, RecordPrediction, Schema,
};
use crate::inference::{fit_with_progress, Objective};
use crate::model::{Model, Snapshot};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NOT_CONVERGED: i32 = 4;

/// Version of the fitted-model file written by `fit`.
pub const FITTED_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("io error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "chronoskill", version, about = "Fit, evaluate and inspect dynamic pairwise-comparison models")]
pub struct Cli {
    /// Worker threads (default: all available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Suppress progress records on standard error.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to a dataset and write a snapshot.
    Fit(FitArgs),
    /// Evaluate a model or baseline with the rolling protocol.
    Evaluate(EvaluateArgs),
    /// Random search over a hyperparameter space.
    Search(SearchArgs),
    /// Export posterior score trajectories as CSV.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Match CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Schema JSON (defaults: no ties, outcome column, years).
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct FitOverrides {
    #[arg(long, value_enum)]
    pub objective: Option<ObjectiveArg>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ObjectiveArg {
    Ep,
    ReverseKl,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Model template JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Where to write the fitted model.
    #[arg(long)]
    pub out: PathBuf,
    /// Fit only the first fraction of the records.
    #[arg(long, default_value_t = 1.0)]
    pub train_fraction: f64,
    #[command(flatten)]
    pub overrides: FitOverrides,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum Baseline {
    Random,
    Elo,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Model template JSON, refitted day by day.
    #[arg(long, conflicts_with_all = ["baseline", "snapshot"])]
    pub model: Option<PathBuf>,
    /// Fitted model from `fit`, used as is for every test record.
    #[arg(long, conflicts_with = "baseline")]
    pub snapshot: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    /// Elo step size.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Elo draw margin (data with ties).
    #[arg(long)]
    pub draw_margin: Option<f64>,
    #[arg(long, default_value_t = 0.7)]
    pub train_fraction: f64,
    /// Write per-record predictions here as CSV.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: FitOverrides,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Search-space JSON.
    #[arg(long)]
    pub space: PathBuf,
    /// Number of sampled configurations.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0.7)]
    pub train_fraction: f64,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Fitted model from `fit`.
    #[arg(long)]
    pub snapshot: PathBuf,
    /// Comma-separated feature ids (default: all).
    #[arg(long, value_delimiter = ',')]
    pub features: Vec<String>,
    /// Grid start in model time units (default: first observation).
    #[arg(long)]
    pub start: Option<f64>,
    /// Grid end (default: last observation).
    #[arg(long)]
    pub end: Option<f64>,
    /// Grid step (default: span / 100).
    #[arg(long)]
    pub step: Option<f64>,
    /// Output CSV (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Fitted model together with everything needed to reuse it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FittedFile {
    pub format_version: u32,
    pub template: ModelTemplate,
    pub schema: Schema,
    pub snapshot: Snapshot,
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn load_data(args: &DataArgs) -> Result<(Vec<MatchRecord>, Schema), CliError> {
    let schema: Schema = match &args.schema {
        Some(p) => read_json(p)?,
        None => Schema::default(),
    };
    let ds = parse_dataset(&args.data, &schema).map_err(|e| match e {
        evaldata::DataError::Io { .. } => CliError::Config(e.to_string()),
        other => CliError::Data(format!("{}: {other}", args.data.display())),
    })?;
    for s in &ds.skipped {
        eprintln!("{}", serde_json::json!({ "skipped": s.to_string() }));
    }
    Ok((ds.records, schema))
}

fn load_template(path: &Path, overrides: &FitOverrides) -> Result<ModelTemplate, CliError> {
    let mut template: ModelTemplate = read_json(path)?;
    if let Some(o) = overrides.objective {
        template.fit.objective = match o {
            ObjectiveArg::Ep => Objective::Ep,
            ObjectiveArg::ReverseKl => Objective::ReverseKl,
        };
    }
    if let Some(lr) = overrides.learning_rate {
        template.fit.learning_rate = Some(lr);
    }
    if let Some(t) = overrides.tolerance {
        template.fit.tolerance = t;
    }
    if let Some(m) = overrides.max_iter {
        template.fit.max_iter = m;
    }
    // record the resolved step size
    template.fit.learning_rate = Some(template.fit.resolved_learning_rate(&template.likelihood));
    template
        .fit
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(template)
}

fn check_fraction(f: f64) -> Result<(), CliError> {
    if (0.0..=1.0).contains(&f) {
        Ok(())
    } else {
        Err(CliError::Config(format!("train fraction must lie in [0, 1] (got {f})")))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    let mut out = io::stdout().lock();
    writeln!(out, "{text}").map_err(|e| CliError::Io(e.to_string()))
}

struct Ctx {
    quiet: bool,
    seed: u64,
}

impl Ctx {
    fn progress(&self, value: serde_json::Value) {
        if !self.quiet {
            eprintln!("{value}");
        }
    }
}

fn cmd_fit(ctx: &Ctx, args: &FitArgs) -> Result<i32, CliError> {
    check_fraction(args.train_fraction)?;
    let template = load_template(&args.model, &args.overrides)?;
    let (records, schema) = load_data(&args.data)?;
    let (train, _) = chronological_split(&records, args.train_fraction);
    let mut model = template.build(train, &schema)?;
    let report = fit_with_progress(&mut model, &template.fit, |p| {
        ctx.progress(serde_json::to_value(p).expect("plain numbers"))
    })
    .map_err(|e| CliError::Data(e.to_string()))?;
    let file = FittedFile {
        format_version: FITTED_FORMAT_VERSION,
        snapshot: model.snapshot(Some(&template.fit)),
        template,
        schema,
    };
    let mut w = create(&args.out)?;
    serde_json::to_writer(&mut w, &file).map_err(|e| CliError::Io(e.to_string()))?;
    w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    print_json(&report)?;
    Ok(if report.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

fn load_fitted(path: &Path) -> Result<(FittedFile, Model), CliError> {
    let file: FittedFile = read_json(path)?;
    if file.format_version != FITTED_FORMAT_VERSION {
        return Err(CliError::Config(format!(
            "{}: unsupported format_version {}",
            path.display(),
            file.format_version
        )));
    }
    let model = Model::from_snapshot(&file.snapshot).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok((file, model))
}

fn cmd_evaluate(ctx: &Ctx, args: &EvaluateArgs) -> Result<i32, CliError> {
    check_fraction(args.train_fraction)?;
    let (records, schema) = load_data(&args.data)?;
    let mut code = EXIT_OK;
    let result: EvalResult = match (&args.model, &args.snapshot, args.baseline) {
        (Some(path), None, None) => {
            let template = load_template(path, &args.overrides)?;
            let result = rolling_evaluate_with(&template, &records, &schema, args.train_fraction, |day, report| {
                ctx.progress(serde_json::json!({
                    "day": day,
                    "iterations": report.iterations,
                    "converged": report.converged,
                    "log_marginal": report.final_log_marginal(),
                }))
            })?;
            if result.fits.unconverged > 0 {
                code = EXIT_NOT_CONVERGED;
            }
            result
        }
        (None, Some(path), None) => {
            let (file, mut model) = load_fitted(path)?;
            let (_, test) = chronological_split(&records, args.train_fraction);
            let mut preds = Vec::with_capacity(test.len());
            for r in test {
                let probs = file.template.predict(&mut model, r, &schema)?;
                preds.push(RecordPrediction::new(r, probs));
            }
            EvalResult::from_predictions(preds)
        }
        (None, None, Some(Baseline::Random)) => {
            let (_, test) = chronological_split(&records, args.train_fraction);
            random_baseline(test, &schema)
        }
        (None, None, Some(Baseline::Elo)) => {
            let lr = args
                .lr
                .ok_or_else(|| CliError::Config("--baseline elo needs --lr".into()))?;
            let config = EloConfig {
                learning_rate: lr,
                draw_margin: args.draw_margin,
            };
            elo_baseline(&records, &schema, &config, args.train_fraction)?
        }
        _ => {
            return Err(CliError::Config(
                "pass exactly one of --model, --snapshot or --baseline".into(),
            ))
        }
    };
    if let Some(path) = &args.predictions {
        let w = create(path)?;
        result
            .write_predictions(w)
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    print_json(&result)?;
    Ok(code)
}

fn cmd_search(ctx: &Ctx, args: &SearchArgs) -> Result<i32, CliError> {
    check_fraction(args.train_fraction)?;
    let space: serde_json::Value = read_json(&args.space)?;
    let (records, schema) = load_data(&args.data)?;
    let (train, _) = chronological_split(&records, args.train_fraction);
    let ranked = random_search(&space, args.n, ctx.seed, train, &schema)?;
    print_json(&ranked)?;
    Ok(EXIT_OK)
}

/// `start, start + step, ...` up to `end` inclusive (within rounding).
pub fn grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    let span = end - start;
    let n = (span / step + 1e-9).floor() as usize;
    (0..=n).map(|k| start + k as f64 * step).collect()
}

fn cmd_export(_ctx: &Ctx, args: &ExportArgs) -> Result<i32, CliError> {
    let (_, model) = load_fitted(&args.snapshot)?;
    let obs = model.observations();
    let first = obs.first().map(|o| o.time()).unwrap_or(0.0);
    let last = obs.last().map(|o| o.time()).unwrap_or(first);
    let start = args.start.unwrap_or(first);
    let end = args.end.unwrap_or(last);
    if !(start.is_finite() && end.is_finite() && end >= start) {
        return Err(CliError::Config(format!("grid needs start <= end (got {start}, {end})")));
    }
    let step = args
        .step
        .unwrap_or(if end > start { (end - start) / 100.0 } else { 1.0 });
    if !(step > 0.0 && step.is_finite()) {
        return Err(CliError::Config(format!("grid step must be positive (got {step})")));
    }
    let ids: Vec<String> = if args.features.is_empty() {
        model.feature_ids().map(str::to_string).collect()
    } else {
        args.features.clone()
    };
    for id in &ids {
        if !model.has_feature(id) {
            return Err(CliError::Config(format!("unknown feature `{id}`")));
        }
    }
    let ts = grid(start, end, step);
    let sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let io_err = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(["feature", "t", "mean", "std"]).map_err(io_err)?;
    for id in &ids {
        let traj = model
            .trajectory(id, &ts)
            .map_err(|e| CliError::Data(e.to_string()))?;
        for p in traj {
            w.write_record([id.clone(), format!("{:?}", p.t), format!("{:?}", p.mean), format!("{:?}", p.std)])
                .map_err(io_err)?;
        }
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(EXIT_OK)
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("config error: --threads must be at least 1");
            return EXIT_CONFIG;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("config error: {e}");
            return EXIT_CONFIG;
        }
    }
    let ctx = Ctx {
        quiet: cli.quiet,
        seed: cli.seed,
    };
    let outcome = match &cli.command {
        Command::Fit(a) => cmd_fit(&ctx, a),
        Command::Evaluate(a) => cmd_evaluate(&ctx, a),
        Command::Search(a) => cmd_search(&ctx, a),
        Command::Export(a) => cmd_export(&ctx, a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

/// Recomputes aggregates from a predictions CSV written by `evaluate`.
pub fn reevaluate(path: &Path) -> Result<EvalResult, CliError> {
    let file = File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let preds = EvalResult::read_predictions(file)?;
    Ok(EvalResult::from_predictions(preds))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_endpoints() {
        assert_eq!(grid(0.0, 2.0, 2.0), vec![0.0, 2.0]);
        assert_eq!(grid(1.0, 1.0, 0.5), vec![1.0]);
        assert_eq!(grid(0.0, 1.0, 0.25).len(), 5);
        assert_eq!(grid(0.0, 0.3, 0.1).len(), 4);
    }

    #[test]
    fn bad_arguments_exit_with_config_code() {
        assert_eq!(run(["chronoskill", "fit"]), EXIT_CONFIG);
        assert_eq!(run(["chronoskill", "frobnicate"]), EXIT_CONFIG);
    }
}
