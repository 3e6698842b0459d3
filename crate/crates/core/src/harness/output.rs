//! Result files: one CSV row per (cell, method), a plain-text summary next
//! to it, and an optional per-run dump.
//!
//! CSV columns: `cell, method, runs, success_rate, rmse_all, rmse_success,
//! crlb_rmse, mean_ms, seed`. Floats are written in shortest round-trip form
//! so parsing the file back reproduces the aggregates exactly. `mean_ms` is
//! left empty unless timing is requested, which keeps repeated campaigns
//! byte-identical.

use std::fmt::Write as _;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::Method;
use super::run::{CellResult, RunRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub cell: String,
    pub method: Method,
    pub runs: usize,
    pub success_rate: f64,
    pub rmse_all: f64,
    pub rmse_success: f64,
    pub crlb_rmse: f64,
    pub mean_ms: Option<f64>,
    pub seed: u64,
}

pub fn rows(results: &[CellResult], timing: bool) -> Vec<CsvRow> {
    results
        .iter()
        .flat_map(|c| {
            c.methods.iter().map(move |m| CsvRow {
                cell: c.cell.clone(),
                method: m.method,
                runs: m.runs,
                success_rate: m.success_rate,
                rmse_all: m.rmse_all,
                rmse_success: m.rmse_success,
                crlb_rmse: c.crlb_rmse,
                mean_ms: timing.then_some(m.mean_ms),
                seed: c.seed,
            })
        })
        .collect()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse(format!("{}: {other:?}", path.display())),
    }
}

const HEADER: [&str; 9] = [
    "cell", "method", "runs", "success_rate", "rmse_all", "rmse_success", "crlb_rmse", "mean_ms", "seed",
];

fn write_csv<W: std::io::Write>(out: W, results: &[CellResult], timing: bool) -> std::result::Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(HEADER)?;
    for row in rows(results, timing) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Path of the text summary written next to a CSV file.
pub fn summary_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("summary.txt")
}

/// Writes the CSV and its summary. Returns the summary path.
pub fn emit_results(results: &[CellResult], path: &Path, timing: bool) -> Result<PathBuf> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(file, results, timing).map_err(|e| csv_err(path, e))?;
    let sp = summary_path(path);
    std::fs::write(&sp, summary_table(results)).map_err(|e| Error::io(&sp, e))?;
    Ok(sp)
}

/// CSV text for stdout.
pub fn results_csv(results: &[CellResult], timing: bool) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, results, timing).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("csv output is utf-8")
}

pub fn read_results(path: &Path) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(|e| csv_err(path, e))
}

pub fn write_run_dump(records: &[RunRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_run_dump(path: &Path) -> Result<Vec<RunRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(|e| csv_err(path, e))
}

fn pct(x: f64) -> String {
    if x.is_nan() {
        "-".into()
    } else {
        format!("{:.2}%", 100.0 * x)
    }
}

fn meters(x: f64) -> String {
    if x.is_nan() {
        "-".into()
    } else {
        format!("{x:.4}")
    }
}

/// Success rates per cell and method in a fixed-width table, followed by the
/// error columns.
pub fn summary_table(results: &[CellResult]) -> String {
    let mut s = String::new();
    let methods: Vec<Method> = results.first().map(|c| c.methods.iter().map(|m| m.method).collect()).unwrap_or_default();
    let _ = writeln!(s, "Success rate (error <= 3 x CRLB position bound)");
    let _ = write!(s, "{:<14}", "cell");
    for m in &methods {
        let _ = write!(s, "{:>16}", m.name());
    }
    let _ = writeln!(s);
    for c in results {
        let _ = write!(s, "{:<14}", c.cell);
        for m in &c.methods {
            let _ = write!(s, "{:>16}", pct(m.success_rate));
        }
        let _ = writeln!(s);
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<14}{:>16}{:>8}{:>12}{:>14}{:>12}{:>8}{:>12}{:>10}",
        "cell", "method", "runs", "rmse_all", "rmse_success", "crlb_rmse", "nonconv", "succ|conv", "mean_ms"
    );
    for c in results {
        for m in &c.methods {
            let _ = writeln!(
                s,
                "{:<14}{:>16}{:>8}{:>12}{:>14}{:>12}{:>8}{:>12}{:>10.2}",
                c.cell,
                m.method.name(),
                m.runs,
                meters(m.rmse_all),
                meters(m.rmse_success),
                meters(c.crlb_rmse),
                m.nonconverged,
                pct(m.success_rate_converged),
                m.mean_ms
            );
        }
    }
    s
}
