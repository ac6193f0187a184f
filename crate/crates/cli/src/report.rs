//! CSV output: convergence logs and bench tables, each preceded by a `#`
//! metadata row naming the version, seed and configuration hash.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use tomoforge_core::solver::IterationRecord;

use crate::error::{CliError, Result};

pub const LOG_COLUMNS: [&str; 9] = [
    "iter", "objective", "fidelity", "prior", "grad_norm", "time_s", "restarted", "level", "workers",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Metadata {
    pub seed: u64,
    pub config_hash: String,
    pub extra: Vec<(String, String)>,
}

impl Metadata {
    pub fn new(seed: u64, config_hash: String) -> Self {
        Self {
            seed,
            config_hash,
            extra: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.extra.push((key.into(), value.to_string()));
        self
    }

    pub fn line(&self) -> String {
        let mut s = format!(
            "# tomoforge {} seed={} config_sha256={} precision=f64",
            env!("CARGO_PKG_VERSION"),
            self.seed,
            self.config_hash
        );
        for (k, v) in &self.extra {
            s.push_str(&format!(" {k}={v}"));
        }
        s
    }
}

/// Parses a metadata row back into `key=value` pairs.
pub fn parse_metadata(line: &str) -> Option<Vec<(String, String)>> {
    let rest = line.strip_prefix("# tomoforge ")?;
    let mut it = rest.split_whitespace();
    let mut out = vec![("version".to_string(), it.next()?.to_string())];
    for kv in it {
        let (k, v) = kv.split_once('=')?;
        out.push((k.into(), v.into()));
    }
    Some(out)
}

fn open(path: &Path, meta: &Metadata) -> Result<csv::Writer<File>> {
    let mut f = File::create(path).map_err(|e| CliError::io(path, e))?;
    writeln!(f, "{}", meta.line()).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

/// One row per iteration; `time_s` is cumulative over the run.
pub fn write_log(path: &Path, meta: &Metadata, records: &[IterationRecord]) -> Result<()> {
    let mut w = open(path, meta)?;
    let err = |e: csv::Error| CliError::io(path, e);
    w.write_record(LOG_COLUMNS).map_err(err)?;
    let mut clock = 0.0;
    for r in records {
        clock += r.step_time;
        w.write_record([
            r.iter.to_string(),
            format!("{:e}", r.objective),
            format!("{:e}", r.fidelity),
            format!("{:e}", r.prior),
            format!("{:e}", r.grad_norm),
            format!("{clock:.6}"),
            (r.restarted as u8).to_string(),
            r.level.to_string(),
            r.workers.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Serializes `rows` with their field names as the header.
pub fn write_table<T: Serialize>(path: &Path, meta: &Metadata, rows: &[T]) -> Result<()> {
    let mut w = open(path, meta)?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
