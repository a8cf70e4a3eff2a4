//! Per-evaluation metrics records, written as JSONL with a mirrored CSV.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryAccuracy {
    pub query_index: usize,
    pub accuracy: f64,
}

/// Scalars recorded at one evaluation point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    /// `step · batch_size · ctx_len`.
    pub tokens_seen: u64,
    pub lr: f64,
    /// Mean training loss over the updates since the previous record.
    pub train_loss: f64,
    /// Pre-clip gradient norm of the last update.
    pub grad_norm: f64,
    pub param_norm: f64,
    /// Mean over queried positions.
    pub copy_acc: f64,
    pub copy_acc_by_query: Vec<QueryAccuracy>,
    /// Seconds since the run (or resumed run) started. Excluded from
    /// determinism comparisons.
    pub wall_clock_s: f64,
}

impl MetricsRecord {
    /// Copy with the wall-clock field zeroed, for bitwise comparisons.
    pub fn without_clock(&self) -> Self {
        Self {
            wall_clock_s: 0.0,
            ..self.clone()
        }
    }
}

pub const CSV_BASE_COLUMNS: [&str; 8] = [
    "step",
    "tokens_seen",
    "lr",
    "train_loss",
    "grad_norm",
    "param_norm",
    "copy_acc",
    "wall_clock_s",
];

/// CSV header: the base columns, then `acc_q{i}` per queried sequence.
pub fn csv_header(queries: &[usize]) -> String {
    let mut cols: Vec<String> = CSV_BASE_COLUMNS.iter().map(|s| s.to_string()).collect();
    cols.extend(queries.iter().map(|q| format!("acc_q{q}")));
    cols.join(",")
}

pub fn csv_row(r: &MetricsRecord) -> String {
    let mut out = format!(
        "{},{},{},{},{},{},{},{}",
        r.step, r.tokens_seen, r.lr, r.train_loss, r.grad_norm, r.param_norm, r.copy_acc, r.wall_clock_s
    );
    for q in &r.copy_acc_by_query {
        out.push_str(&format!(",{}", q.accuracy));
    }
    out
}

/// Appends records to `metrics.jsonl` and `metrics.csv`, flushing each line.
pub struct MetricsWriter {
    jsonl: std::fs::File,
    csv: std::fs::File,
    dir: std::path::PathBuf,
}

impl MetricsWriter {
    /// Creates both files, truncating existing ones, and writes the CSV header.
    pub fn create(dir: &Path, queries: &[usize]) -> Result<Self> {
        let jp = dir.join("metrics.jsonl");
        let cp = dir.join("metrics.csv");
        let jsonl = std::fs::File::create(&jp).map_err(|e| Error::io(&jp, e))?;
        let mut csv = std::fs::File::create(&cp).map_err(|e| Error::io(&cp, e))?;
        writeln!(csv, "{}", csv_header(queries)).map_err(|e| Error::io(&cp, e))?;
        Ok(Self {
            jsonl,
            csv,
            dir: dir.to_path_buf(),
        })
    }

    /// Rewrites both files with `records`, then keeps appending.
    pub fn resume(dir: &Path, queries: &[usize], records: &[MetricsRecord]) -> Result<Self> {
        let mut w = Self::create(dir, queries)?;
        for r in records {
            w.append(r)?;
        }
        Ok(w)
    }

    pub fn append(&mut self, r: &MetricsRecord) -> Result<()> {
        let jp = self.dir.join("metrics.jsonl");
        let cp = self.dir.join("metrics.csv");
        let line = serde_json::to_string(r)?;
        writeln!(self.jsonl, "{line}").map_err(|e| Error::io(&jp, e))?;
        writeln!(self.csv, "{}", csv_row(r)).map_err(|e| Error::io(&cp, e))?;
        self.jsonl.flush().map_err(|e| Error::io(&jp, e))?;
        self.csv.flush().map_err(|e| Error::io(&cp, e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
