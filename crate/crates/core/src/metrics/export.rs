//! Report files. Column order and row order are fixed, so equal inputs give
//! byte-equal files.

use super::experiment::{BootstrapReport, CompareReport, SweepReport};
use super::run::RunRecord;
use super::stats::Summary;
use crate::config::ExperimentConfig;
use crate::overlay::{write_trace_csv, TraceRow};
use crate::time::duration_nanos;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExportError + '_ {
    move |source| ExportError::Io {
        path: path.to_owned(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> ExportError + '_ {
    move |e| ExportError::Io {
        path: path.to_owned(),
        source: e.into(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, ExportError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn summary_fields(s: &Summary) -> [String; 3] {
    [s.median.to_string(), s.p25.to_string(), s.p75.to_string()]
}

/// Writes a header and rows; an empty `rows` gives a header-only file.
fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(&r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), ExportError> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, v).map_err(|e| ExportError::Io {
        path: path.to_owned(),
        source: e.into(),
    })?;
    f.write_all(b"\n").map_err(io_err(path))?;
    f.flush().map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ExportError> {
    let text = std::fs::read_to_string(path).map_err(|e| ExportError::Read {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| ExportError::Read {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

pub const COMPARE_HEADER: [&str; 6] = ["system", "size_bytes", "metric", "median", "p25", "p75"];
pub const SWEEP_HEADER: [&str; 5] = ["n_clients", "metric", "median", "p25", "p75"];
pub const BOOTSTRAP_HEADER: [&str; 5] = ["system", "metric", "median", "p25", "p75"];

/// Writes `compare.csv` or `compare.json` into `dir`; returns the path.
pub fn write_compare(report: &CompareReport, dir: &Path, format: Format) -> Result<PathBuf, ExportError> {
    match format {
        Format::Csv => {
            let path = dir.join("compare.csv");
            let rows = report.rows.iter().map(|r| {
                let mut v = vec![r.system.clone(), r.size_bytes.to_string(), r.metric.clone()];
                v.extend(summary_fields(&r.summary));
                v
            });
            write_csv(&path, &COMPARE_HEADER, rows)?;
            Ok(path)
        }
        Format::Json => {
            let path = dir.join("compare.json");
            write_json(&path, report)?;
            Ok(path)
        }
    }
}

pub fn write_sweep(report: &SweepReport, dir: &Path, format: Format) -> Result<PathBuf, ExportError> {
    match format {
        Format::Csv => {
            let path = dir.join("sweep.csv");
            let rows = report.rows().into_iter().map(|r| {
                let mut v = vec![r.n_clients.to_string(), r.metric];
                v.extend(summary_fields(&r.summary));
                v
            });
            write_csv(&path, &SWEEP_HEADER, rows)?;
            Ok(path)
        }
        Format::Json => {
            let path = dir.join("sweep.json");
            write_json(&path, report)?;
            Ok(path)
        }
    }
}

pub fn write_bootstrap(report: &BootstrapReport, dir: &Path, format: Format) -> Result<PathBuf, ExportError> {
    match format {
        Format::Csv => {
            let path = dir.join("bootstrap.csv");
            let rows = report.rows.iter().map(|r| {
                let mut v = vec![r.system.clone(), r.metric.clone()];
                v.extend(summary_fields(&r.summary));
                v
            });
            write_csv(&path, &BOOTSTRAP_HEADER, rows)?;
            Ok(path)
        }
        Format::Json => {
            let path = dir.join("bootstrap.json");
            write_json(&path, report)?;
            Ok(path)
        }
    }
}

/// One session and its transfers, as written by `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub system: crate::session::System,
    pub bootstrap_time_ns: u64,
    pub control_open_time_ns: u64,
    pub transfers: Vec<crate::session::TransferResult>,
}

impl SessionSummary {
    pub fn new(config: &ExperimentConfig, rec: &RunRecord) -> Self {
        SessionSummary {
            config: config.clone(),
            seed: rec.seed,
            system: rec.system,
            bootstrap_time_ns: duration_nanos(rec.bootstrap_time),
            control_open_time_ns: duration_nanos(rec.open_time),
            transfers: vec![rec.transfer.clone()],
        }
    }
}

/// Writes `session.json` and `trace.csv` into `dir`.
pub fn write_session(summary: &SessionSummary, trace: &[TraceRow], dir: &Path) -> Result<Vec<PathBuf>, ExportError> {
    let json = dir.join("session.json");
    write_json(&json, summary)?;
    let csv_path = dir.join("trace.csv");
    write_trace_csv(trace, create(&csv_path)?).map_err(csv_err(&csv_path))?;
    Ok(vec![json, csv_path])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::experiment::CompareRow;

    fn report(rows: Vec<CompareRow>) -> CompareReport {
        CompareReport {
            config: ExperimentConfig::default(),
            seeds: vec![1, 2],
            rows,
            runs: vec![],
        }
    }

    #[test]
    fn empty_compare_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_compare(&report(vec![]), dir.path(), Format::Csv).unwrap();
        assert_eq!(
            std::fs::read_to_string(p).unwrap(),
            "system,size_bytes,metric,median,p25,p75\n"
        );
    }

    #[test]
    fn compare_json_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let r = report(vec![CompareRow {
            system: "darkhorse".into(),
            size_bytes: 1024,
            metric: "transfer_time_ms".into(),
            summary: Summary {
                median: 1.5,
                p25: 1.0,
                p75: 2.25,
            },
        }]);
        let p = write_compare(&r, dir.path(), Format::Json).unwrap();
        let first = std::fs::read(&p).unwrap();
        let back: CompareReport = read_json(&p).unwrap();
        assert_eq!(back, r);
        write_compare(&back, dir.path(), Format::Json).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), first);
    }

    #[test]
    fn csv_rows_have_constant_width() {
        let dir = tempfile::tempdir().unwrap();
        let row = |m: &str| CompareRow {
            system: "vanilla".into(),
            size_bytes: 7,
            metric: m.into(),
            summary: Summary::default(),
        };
        let p = write_compare(&report(vec![row("a"), row("b,c")]), dir.path(), Format::Csv).unwrap();
        let mut rd = csv::Reader::from_path(p).unwrap();
        assert_eq!(rd.headers().unwrap().len(), 6);
        for r in rd.records() {
            assert_eq!(r.unwrap().len(), 6);
        }
    }

    #[test]
    fn unwritable_dir_is_an_io_error() {
        let err = write_compare(&report(vec![]), Path::new("/nonexistent/dir"), Format::Csv).unwrap_err();
        assert!(matches!(err, ExportError::Io { .. }));
    }
}
