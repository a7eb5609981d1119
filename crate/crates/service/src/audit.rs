//! Append-only, newline-delimited JSON audit log.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::state::AuditEvent;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("audit log {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("audit log line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("audit log line {line}: sequence {got} does not follow {prev}")]
    Sequence { line: usize, prev: u64, got: u64 },
    #[error("audit record {seq} ({kind}): {message}")]
    Payload { seq: u64, kind: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub ts: DateTime<Utc>,
    pub kind: String,
    pub payload: Value,
}

impl AuditRecord {
    pub fn event(&self) -> Result<AuditEvent, AuditError> {
        AuditEvent::from_parts(&self.kind, &self.payload).map_err(|e| AuditError::Payload {
            seq: self.seq,
            kind: self.kind.clone(),
            message: e.to_string(),
        })
    }

    /// AWC named in the payload.
    pub fn awc(&self) -> Option<&str> {
        self.payload.get("awc").and_then(Value::as_str)
    }
}

pub struct AuditLog {
    sink: Option<(PathBuf, File)>,
    records: Vec<AuditRecord>,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        AuditLog { sink: None, records: Vec::new() }
    }

    /// Open `path` for appending, loading whatever it already holds.
    pub fn open(path: &Path) -> Result<Self, AuditError> {
        let records = if path.exists() { read_log(path)? } else { Vec::new() };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| AuditError::Io { path: path.into(), source })?;
        Ok(AuditLog { sink: Some((path.into(), file)), records })
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn last_seq(&self) -> u64 {
        self.records.last().map_or(0, |r| r.seq)
    }

    /// Durably write one record. Nothing is kept in memory if the write fails.
    pub fn append(&mut self, ts: DateTime<Utc>, event: &AuditEvent) -> Result<AuditRecord, AuditError> {
        let (kind, payload) = event.to_parts();
        let rec = AuditRecord { seq: self.last_seq() + 1, ts, kind, payload };
        if let Some((path, file)) = &mut self.sink {
            let mut line = serde_json::to_string(&rec).expect("audit record serializes");
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|source| AuditError::Io { path: path.clone(), source })?;
        }
        self.records.push(rec.clone());
        Ok(rec)
    }
}

/// Read a log, checking that sequence numbers strictly increase.
pub fn read_log(path: &Path) -> Result<Vec<AuditRecord>, AuditError> {
    let file = File::open(path).map_err(|source| AuditError::Io { path: path.into(), source })?;
    let mut out: Vec<AuditRecord> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| AuditError::Io { path: path.into(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AuditRecord =
            serde_json::from_str(&line).map_err(|e| AuditError::Parse { line: i + 1, message: e.to_string() })?;
        let prev = out.last().map_or(0, |r| r.seq);
        if rec.seq <= prev {
            return Err(AuditError::Sequence { line: i + 1, prev, got: rec.seq });
        }
        out.push(rec);
    }
    Ok(out)
}
