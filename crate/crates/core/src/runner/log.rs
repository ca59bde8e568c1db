use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::RunError;
use crate::metrics::{MetricsRecord, METRICS_COLUMNS};

pub const RUNLOG_FORMAT: &str = "afrl-runlog";
pub const RUNLOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub code_version: String,
    /// Hex SHA-256 of the canonical config JSON.
    pub config_hash: String,
    pub seed: u64,
    pub mode: String,
    pub sampling: String,
    pub columns: Vec<String>,
    /// Fallbacks and aborts, in the order they happened.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub manifest: Manifest,
    pub records: Vec<MetricsRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    pub fn for_config(cfg: &ExperimentConfig) -> Self {
        Self {
            format: RUNLOG_FORMAT.into(),
            version: RUNLOG_VERSION,
            code_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: sha256_hex(cfg.canonical_json().as_bytes()),
            seed: cfg.seed,
            mode: cfg.mode.as_str().into(),
            sampling: cfg.sampling.as_str().into(),
            columns: METRICS_COLUMNS.iter().map(|c| c.to_string()).collect(),
            notes: Vec::new(),
        }
    }
}

impl RunLog {
    pub fn new(manifest: Manifest) -> Self {
        Self {
            manifest,
            records: Vec::new(),
        }
    }

    /// Appends a row; steps must strictly increase.
    pub fn push(&mut self, record: MetricsRecord) {
        if let Some(last) = self.records.last() {
            assert!(record.step > last.step, "run log steps must increase");
        }
        self.records.push(record);
    }

    pub fn last(&self) -> Option<&MetricsRecord> {
        self.records.last()
    }

    /// Manifest line followed by one line per record.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), RunError> {
        writeln!(w, "{}", serde_json::to_string(&self.manifest)?)?;
        for r in &self.records {
            writeln!(w, "{}", serde_json::to_string(r)?)?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, RunError> {
        let mut lines = r.lines();
        let first = lines.next().ok_or_else(|| RunError::Format("empty run log".into()))??;
        let manifest: Manifest = serde_json::from_str(&first)?;
        if manifest.format != RUNLOG_FORMAT {
            return Err(RunError::Format(format!("not a run log: format {:?}", manifest.format)));
        }
        let mut log = Self::new(manifest);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: MetricsRecord = serde_json::from_str(&line)?;
            if log.last().is_some_and(|l| rec.step <= l.step) {
                return Err(RunError::Format(format!("line {}: step {} not increasing", i + 2, rec.step)));
            }
            log.records.push(rec);
        }
        Ok(log)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), RunError> {
        writeln!(w, "{}", MetricsRecord::csv_header())?;
        for r in &self.records {
            writeln!(w, "{}", r.csv_row())?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn save(&self, dir: &Path) -> Result<(), RunError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("runlog.jsonl"), self.to_jsonl())?;
        std::fs::write(dir.join("metrics.csv"), self.to_csv())?;
        Ok(())
    }
}

pub fn read_csv<R: BufRead>(r: R) -> Result<Vec<MetricsRecord>, RunError> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| RunError::Format("empty csv".into()))??;
    if header.trim_end() != MetricsRecord::csv_header() {
        return Err(RunError::Format(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(MetricsRecord::from_csv_row(&line).map_err(RunError::Format)?);
    }
    Ok(out)
}
