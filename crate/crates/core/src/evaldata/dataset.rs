//! Match CSV ingestion.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SECONDS_PER_DAY: i64 = 86_400;
/// Julian year.
pub const SECONDS_PER_YEAR: f64 = 31_557_600.0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("header: {0}")]
    Header(String),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Ordinal results in the `outcome` column.
    #[default]
    Outcome,
    /// Results derived from `points_i` and `points_j`.
    Points,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    #[default]
    Years,
    Days,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schema {
    pub ties: bool,
    pub source: Source,
    pub time_unit: TimeUnit,
    pub skip_malformed: bool,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            ties: false,
            source: Source::Outcome,
            time_unit: TimeUnit::Years,
            skip_malformed: false,
        }
    }
}

impl Schema {
    /// Model time of a timestamp in seconds.
    pub fn time(&self, timestamp: i64) -> f64 {
        match self.time_unit {
            TimeUnit::Years => timestamp as f64 / SECONDS_PER_YEAR,
            TimeUnit::Days => timestamp as f64 / SECONDS_PER_DAY as f64,
        }
    }

    /// Length of one model-time unit in seconds.
    pub fn unit_seconds(&self) -> f64 {
        match self.time_unit {
            TimeUnit::Years => SECONDS_PER_YEAR,
            TimeUnit::Days => SECONDS_PER_DAY as f64,
        }
    }

    /// Number of ordinal outcomes a uniform predictor spreads over.
    pub fn outcome_count(&self) -> usize {
        if self.ties {
            3
        } else {
            2
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    /// 1-based line in the source file (0 when generated).
    pub line: u64,
    /// Seconds since the Unix epoch.
    pub timestamp: i64,
    pub comp_i: String,
    pub comp_j: String,
    /// Result for `comp_i`: 1 win, 0 tie, -1 loss.
    pub outcome: i8,
    pub points: Option<(u64, u64)>,
    /// 1 when `comp_i` plays at home, -1 when `comp_j` does, 0 otherwise.
    pub home: i8,
    /// 1 when `comp_i` moves first, -1 when `comp_j` does, 0 otherwise.
    pub first_mover: i8,
}

impl MatchRecord {
    pub fn day(&self) -> i64 {
        self.timestamp.div_euclid(SECONDS_PER_DAY)
    }
}

#[derive(Debug)]
pub struct Dataset {
    pub records: Vec<MatchRecord>,
    /// Rows dropped under `skip_malformed`.
    pub skipped: Vec<DataError>,
}

pub fn parse_timestamp(text: &str) -> Result<i64, String> {
    let text = text.trim();
    if let Ok(secs) = text.parse::<i64>() {
        return Ok(secs);
    }
    if let Ok(d) = NaiveDate::parse_from_str(text, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp());
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Ok(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(text, fmt) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    Err(format!("unparseable timestamp `{text}`"))
}

fn parse_outcome(text: &str) -> Result<i8, String> {
    match text.trim().to_ascii_lowercase().as_str() {
        "1" | "+1" | "win" => Ok(1),
        "-1" | "loss" => Ok(-1),
        "0" | "tie" | "draw" => Ok(0),
        other => Err(format!("outcome must be 1, -1 or 0 (got `{other}`)")),
    }
}

fn parse_side(text: &str, column: &str) -> Result<i8, String> {
    match text.trim().to_ascii_lowercase().as_str() {
        "" | "0" | "false" => Ok(0),
        "1" | "+1" | "true" => Ok(1),
        "-1" => Ok(-1),
        other => Err(format!("{column} must be 1, 0 or -1 (got `{other}`)")),
    }
}

fn parse_points(text: &str, column: &str) -> Result<u64, String> {
    text.trim()
        .parse::<u64>()
        .map_err(|_| format!("{column} must be a nonnegative integer (got `{}`)", text.trim()))
}

struct Columns {
    t: usize,
    comp_i: usize,
    comp_j: usize,
    outcome: usize,
    points_i: Option<usize>,
    points_j: Option<usize>,
    home: Option<usize>,
    first_mover: Option<usize>,
}

impl Columns {
    fn from_header(header: &csv::StringRecord, schema: &Schema) -> Result<Self, DataError> {
        let find = |name: &str| header.iter().position(|h| h.trim() == name);
        let need = |name: &str| {
            find(name).ok_or_else(|| DataError::Header(format!("missing required column `{name}`")))
        };
        let known = ["t", "comp_i", "comp_j", "outcome", "points_i", "points_j", "home", "first_mover"];
        if let Some(extra) = header.iter().find(|h| !known.contains(&h.trim())) {
            return Err(DataError::Header(format!("unexpected column `{extra}`")));
        }
        let cols = Columns {
            t: need("t")?,
            comp_i: need("comp_i")?,
            comp_j: need("comp_j")?,
            outcome: need("outcome")?,
            points_i: find("points_i"),
            points_j: find("points_j"),
            home: find("home"),
            first_mover: find("first_mover"),
        };
        if cols.points_i.is_some() != cols.points_j.is_some() {
            return Err(DataError::Header("points_i and points_j must appear together".into()));
        }
        if schema.source == Source::Points && cols.points_i.is_none() {
            return Err(DataError::Header(
                "schema takes results from points but points_i/points_j are missing".into(),
            ));
        }
        Ok(cols)
    }

    fn record(&self, row: &csv::StringRecord, schema: &Schema, line: u64) -> Result<MatchRecord, String> {
        let get = |i: usize| row.get(i).unwrap_or("");
        let timestamp = parse_timestamp(get(self.t))?;
        let comp_i = get(self.comp_i).trim().to_string();
        let comp_j = get(self.comp_j).trim().to_string();
        if comp_i.is_empty() || comp_j.is_empty() {
            return Err("competitor ids must be nonempty".into());
        }
        if comp_i == comp_j {
            return Err(format!("competitor `{comp_i}` cannot play itself"));
        }
        if comp_i.starts_with('@') || comp_j.starts_with('@') {
            return Err("competitor ids starting with `@` are reserved".into());
        }
        let points = match (self.points_i, self.points_j) {
            (Some(a), Some(b)) if !(get(a).trim().is_empty() && get(b).trim().is_empty()) => {
                Some((parse_points(get(a), "points_i")?, parse_points(get(b), "points_j")?))
            }
            _ => None,
        };
        let raw = get(self.outcome).trim();
        let outcome = match schema.source {
            Source::Outcome => parse_outcome(raw)?,
            Source::Points => {
                let (a, b) = points.ok_or("points are required by the schema")?;
                let derived = (a as i128 - b as i128).signum() as i8;
                if !raw.is_empty() && parse_outcome(raw)? != derived {
                    return Err(format!("outcome `{raw}` contradicts points ({a}, {b})"));
                }
                derived
            }
        };
        if outcome == 0 && !schema.ties {
            return Err("tie outcome but the schema does not allow ties".into());
        }
        let home = match self.home {
            Some(c) => parse_side(get(c), "home")?,
            None => 0,
        };
        let first_mover = match self.first_mover {
            Some(c) => parse_side(get(c), "first_mover")?,
            None => 0,
        };
        Ok(MatchRecord {
            line,
            timestamp,
            comp_i,
            comp_j,
            outcome,
            points,
            home,
            first_mover,
        })
    }
}

/// Parses CSV text. Records come back sorted by timestamp, ties in file order.
pub fn parse_reader<R: Read>(reader: R, schema: &Schema) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Ok(Dataset {
            records: Vec::new(),
            skipped: Vec::new(),
        });
    }
    let cols = Columns::from_header(&header, schema)?;
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.iter().all(|f| f.is_empty()) {
            continue;
        }
        match cols.record(&row, schema, line) {
            Ok(r) => records.push(r),
            Err(message) => {
                let err = DataError::Row { line, message };
                if schema.skip_malformed {
                    skipped.push(err);
                } else {
                    return Err(err);
                }
            }
        }
    }
    records.sort_by_key(|r| r.timestamp);
    Ok(Dataset { records, skipped })
}

pub fn parse_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_reader(file, schema)
}

/// Writes records in the CSV layout read by [`parse_reader`].
pub fn write_csv<W: Write>(records: &[MatchRecord], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    let points = records.iter().any(|r| r.points.is_some());
    let home = records.iter().any(|r| r.home != 0);
    let first = records.iter().any(|r| r.first_mover != 0);
    let mut header = vec!["t", "comp_i", "comp_j", "outcome"];
    if points {
        header.extend(["points_i", "points_j"]);
    }
    if home {
        header.push("home");
    }
    if first {
        header.push("first_mover");
    }
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.timestamp.to_string(),
            r.comp_i.clone(),
            r.comp_j.clone(),
            r.outcome.to_string(),
        ];
        if points {
            match r.points {
                Some((a, b)) => row.extend([a.to_string(), b.to_string()]),
                None => row.extend([String::new(), String::new()]),
            }
        }
        if home {
            row.push(r.home.to_string());
        }
        if first {
            row.push(r.first_mover.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
