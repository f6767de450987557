//! Writing records: comma-separated rows and pretty JSON.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use super::config::OutputFormat;
use super::pipeline::{OracleRecord, RunRecord, SweepRecord, FORMAT_VERSION};
use crate::response::SusceptibilityResult;

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("cannot serialize record: {0}")]
    Serialize(#[from] serde_json::Error),
}

/// A record that knows its table layout.
pub trait Emit: Serialize {
    /// File stem, e.g. `chi` for `chi.csv` and `chi.json`.
    fn stem(&self) -> &'static str;
    fn columns(&self) -> &'static [&'static str];
    fn rows(&self) -> Vec<Vec<String>>;
    fn timings_json(&self) -> serde_json::Value;
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".to_owned()
    } else {
        format!("{v:e}")
    }
}

fn text(s: &str) -> String {
    s.replace([',', '\n', '\r'], ";")
}

const CHI_COLUMNS: &[&str] = &[
    "ell",
    "route",
    "beta",
    "mu",
    "U",
    "w1",
    "n_cut",
    "re_chi",
    "im_chi",
    "tail_estimate",
    "deviation",
    "status",
];

fn chi_rows(record: &RunRecord, out: &mut Vec<Vec<String>>) {
    let c = &record.config;
    for result in &record.results {
        for outcome in &result.outcomes {
            let deviation = route_deviation(result, outcome.route);
            let (re, im) = outcome.value.map_or((f64::NAN, f64::NAN), |v| (v.re, v.im));
            let status = outcome.error.as_deref().map_or_else(|| "ok".to_owned(), text);
            out.push(vec![
                result.ell.get().to_string(),
                outcome.route.to_string(),
                num(c.beta),
                num(c.mu),
                num(c.u),
                num(c.w1),
                c.n_cut.to_string(),
                num(re),
                num(im),
                num(result.tail_estimate),
                num(deviation),
                status,
            ]);
        }
    }
}

/// Largest deviation of `route` from any other route of the same result.
fn route_deviation(result: &SusceptibilityResult, route: crate::response::Route) -> f64 {
    result
        .deviations
        .iter()
        .filter(|d| d.a == route || d.b == route)
        .map(|d| d.relative)
        .fold(0.0, f64::max)
}

impl Emit for RunRecord {
    fn stem(&self) -> &'static str {
        "chi"
    }

    fn columns(&self) -> &'static [&'static str] {
        CHI_COLUMNS
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        chi_rows(self, &mut rows);
        rows
    }

    fn timings_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.timings).unwrap_or_default()
    }
}

impl Emit for SweepRecord {
    fn stem(&self) -> &'static str {
        "sweep"
    }

    fn columns(&self) -> &'static [&'static str] {
        CHI_COLUMNS
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for point in &self.points {
            chi_rows(point, &mut rows);
        }
        rows
    }

    fn timings_json(&self) -> serde_json::Value {
        serde_json::Value::Array(self.points.iter().map(Emit::timings_json).collect())
    }
}

impl Emit for OracleRecord {
    fn stem(&self) -> &'static str {
        "oracle"
    }

    fn columns(&self) -> &'static [&'static str] {
        &[
            "label",
            "ell",
            "beta",
            "mu",
            "U",
            "w1",
            "n_cut",
            "bath",
            "max_deviation",
            "max_edge_deviation",
            "richardson_ratio",
            "selection_rule_max",
            "pass",
        ]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for p in &self.points {
            for r in &p.reports {
                rows.push(vec![
                    text(&p.label),
                    r.ell.get().to_string(),
                    num(p.beta),
                    num(p.mu),
                    num(p.u),
                    num(p.w1),
                    p.n_cut.to_string(),
                    p.bath.label().to_owned(),
                    num(r.comparison.max_interior_deviation),
                    num(r.comparison.max_edge_deviation),
                    num(r.richardson_ratio),
                    num(r.selection_rule_max),
                    r.pass.to_string(),
                ]);
            }
        }
        rows
    }

    fn timings_json(&self) -> serde_json::Value {
        serde_json::Value::Null
    }
}

/// Comma-separated table with a single `#` header line naming the version and columns.
pub fn tabular<R: Emit>(record: &R) -> String {
    let mut out = format!("# {FORMAT_VERSION} {}\n", record.columns().join(","));
    for row in record.rows() {
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

pub fn structured<R: Emit>(record: &R) -> Result<String, EmitError> {
    let mut json = serde_json::to_string_pretty(record)?;
    json.push('\n');
    Ok(json)
}

fn write(path: PathBuf, contents: &str) -> Result<PathBuf, EmitError> {
    fs::write(&path, contents).map_err(|source| EmitError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Writes `<stem>.csv` and/or `<stem>.json` into `dir`, plus `<stem>.timings.json`
/// next to the structured file. Everything is rendered before the first write.
pub fn emit<R: Emit>(record: &R, dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>, EmitError> {
    let table = matches!(format, OutputFormat::Tabular | OutputFormat::Both).then(|| tabular(record));
    let json = match format {
        OutputFormat::Structured | OutputFormat::Both => Some(structured(record)?),
        OutputFormat::Tabular => None,
    };
    let timings = serde_json::to_string_pretty(&record.timings_json())?;

    fs::create_dir_all(dir).map_err(|source| EmitError::Io {
        path: dir.to_owned(),
        source,
    })?;
    let stem = record.stem();
    let mut written = Vec::new();
    if let Some(table) = table {
        written.push(write(dir.join(format!("{stem}.csv")), &table)?);
    }
    if let Some(json) = json {
        written.push(write(dir.join(format!("{stem}.json")), &json)?);
        written.push(write(dir.join(format!("{stem}.timings.json")), &timings)?);
    }
    Ok(written)
}
