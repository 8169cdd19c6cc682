//! Metrics rows, the JSONL metrics stream, and flat summaries.
//!
//! One JSON object per line, append-only during a run, stable field order.
//! Every value that reaches this file is a pure function of the config and
//! seed — wall-clock timing goes to a separate sidecar so reruns of the same
//! config are byte-identical here. Undefined diagnostics (e.g. coherence of an
//! all-zero gradient set) serialize as `null` rather than being dropped.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Mode;
use crate::error::Error;
use crate::Result;

/// Whether a row logs a training step or a KL evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Train,
    Eval,
}

/// Branch tag on a train row; mixed vanilla updates touch both teachers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepBranch {
    General,
    Domain,
    Mixed,
}

impl std::fmt::Display for StepBranch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StepBranch::General => write!(f, "general"),
            StepBranch::Domain => write!(f, "domain"),
            StepBranch::Mixed => write!(f, "mixed"),
        }
    }
}

/// One metrics line. Train rows carry step diagnostics; eval rows carry the
/// two KL measurements (`step` = completed optimizer steps at eval time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub kind: RowKind,
    pub mode: Mode,
    pub branch: Option<StepBranch>,
    pub loss: Option<f64>,
    pub grad_norm: Option<f64>,
    pub batch: Option<usize>,
    pub k_selected: Option<usize>,
    pub selected_fraction: Option<f64>,
    pub mass_covered: Option<f64>,
    pub coh_full: Option<f64>,
    pub coh_selected: Option<f64>,
    pub gcg_percent: Option<f64>,
    pub cross_dot: Option<f64>,
    pub cross_cosine: Option<f64>,
    pub cross_cosine_ema: Option<f64>,
    pub kl_general: Option<f64>,
    pub kl_domain: Option<f64>,
}

impl MetricsRow {
    /// Empty shell; callers fill in what their row kind defines.
    pub fn blank(step: u64, kind: RowKind, mode: Mode) -> Self {
        MetricsRow {
            step,
            kind,
            mode,
            branch: None,
            loss: None,
            grad_norm: None,
            batch: None,
            k_selected: None,
            selected_fraction: None,
            mass_covered: None,
            coh_full: None,
            coh_selected: None,
            gcg_percent: None,
            cross_dot: None,
            cross_cosine: None,
            cross_cosine_ema: None,
            kl_general: None,
            kl_domain: None,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics row serializes")
    }
}

/// Append-only JSONL writer, flushed per row.
pub struct MetricsWriter {
    inner: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(MetricsWriter {
            inner: BufWriter::new(file),
        })
    }

    pub fn write_row(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.write_all(row.to_json_line().as_bytes())?;
        self.inner.write_all(b"\n")?;
        self.inner.flush()?;
        Ok(())
    }
}

/// Parse a metrics file back into rows; failures name the offending line.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let file = File::open(path)?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: MetricsRow = serde_json::from_str(&line).map_err(|e| Error::MetricsParse {
            line: i + 1,
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

/// Write a flat `key = value` summary, one pair per line, in the order given.
pub fn write_summary(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (k, v) in pairs {
        writeln!(w, "{k} = {v}")?;
    }
    w.flush()?;
    Ok(())
}

/// Parse a flat summary back into pairs (used by compare and tests).
pub fn read_summary(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            out.push((k.to_string(), v.to_string()));
        }
    }
    Ok(out)
}
