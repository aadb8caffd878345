//! Failure deduplication, coverage tracking and the on-disk report.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::engine::{MutationKind, RequestPlan, ResponseRecord};
use crate::learning::QRow;
use crate::spdg::Spdg;
use crate::values::ValueSource;

/// Longest raw-body message kept in a deduplication key, in characters.
pub const MESSAGE_LIMIT: usize = 200;

pub const REPORT_FILE: &str = "report.json";
pub const SPDG_JSON_FILE: &str = "spdg.json";
pub const SPDG_DOT_FILE: &str = "spdg.dot";
pub const QTABLES_FILE: &str = "qtables.json";
pub const REQUESTS_FILE: &str = "requests.jsonl";

/// The server's message: a JSON `message` or `error` field when present,
/// otherwise the trimmed body cut to [`MESSAGE_LIMIT`] characters.
pub fn failure_message(body: &str) -> String {
    if let Ok(Value::Object(map)) = serde_json::from_str::<Value>(body) {
        for field in ["message", "error"] {
            match map.get(field) {
                Some(Value::String(s)) => return s.clone(),
                Some(v) if !v.is_null() => return v.to_string(),
                _ => {}
            }
        }
    }
    body.trim().chars().take(MESSAGE_LIMIT).collect()
}

pub fn dedup_key(operation_id: &str, body: &str) -> String {
    format!("{operation_id}|{}", failure_message(body))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub operation: String,
    pub status: u16,
    pub dedup_key: String,
    pub message: String,
    /// Sequence number of the first request that produced this failure.
    pub first_seen: u64,
    pub occurrences: u64,
    pub mutated: bool,
    pub mutation_kind: Option<MutationKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub operations_total: usize,
    pub operations_processed: usize,
    pub processed: Vec<String>,
    pub requests: u64,
    /// Status code (or `transport_error`) to count.
    pub status_counts: BTreeMap<String, u64>,
    /// Sequence number of each operation's first unmutated 2xx.
    pub first_success: BTreeMap<String, u64>,
    /// Requests issued when the last operation was first processed.
    pub requests_to_full_coverage: Option<u64>,
    pub failures: Vec<FailureRecord>,
}

/// One line of `requests.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestLogEntry {
    pub seq: u64,
    pub operation: String,
    pub mutated: bool,
    pub mutation_kind: Option<MutationKind>,
    pub status: Option<u16>,
    pub latency_ms: f64,
    /// Parameter name to the source that produced its value.
    pub sources: BTreeMap<String, ValueSource>,
}

impl RequestLogEntry {
    pub fn new(seq: u64, plan: &RequestPlan, response: &ResponseRecord) -> Self {
        RequestLogEntry {
            seq,
            operation: plan.operation_id.clone(),
            mutated: plan.mutated(),
            mutation_kind: plan.mutation,
            status: response.status,
            latency_ms: response.latency_ms(),
            sources: plan
                .bindings
                .iter()
                .map(|b| (b.name.clone(), b.source))
                .collect(),
        }
    }
}

/// Incremental aggregation of observed exchanges.
#[derive(Debug, Clone)]
pub struct CoverageTracker {
    operations: Vec<String>,
    processed: BTreeSet<String>,
    requests: u64,
    status_counts: BTreeMap<String, u64>,
    first_success: BTreeMap<String, u64>,
    full_coverage_at: Option<u64>,
    failures: Vec<FailureRecord>,
    failure_index: BTreeMap<String, usize>,
}

impl CoverageTracker {
    pub fn new(operations: Vec<String>) -> Self {
        CoverageTracker {
            operations,
            processed: BTreeSet::new(),
            requests: 0,
            status_counts: BTreeMap::new(),
            first_success: BTreeMap::new(),
            full_coverage_at: None,
            failures: Vec::new(),
            failure_index: BTreeMap::new(),
        }
    }

    pub fn observe(
        &mut self,
        seq: u64,
        operation: &str,
        mutation: Option<MutationKind>,
        status: Option<u16>,
        body: &str,
    ) {
        self.requests += 1;
        let label = status.map_or_else(|| "transport_error".to_string(), |s| s.to_string());
        *self.status_counts.entry(label).or_default() += 1;
        let Some(status) = status else {
            return;
        };
        if (200..300).contains(&status)
            && mutation.is_none()
            && self.processed.insert(operation.to_string())
        {
            self.first_success.insert(operation.to_string(), seq);
            if self.processed.len() == self.operations.len() {
                self.full_coverage_at = Some(self.requests);
            }
        }
        if status >= 500 {
            let key = dedup_key(operation, body);
            match self.failure_index.get(&key) {
                Some(&i) => self.failures[i].occurrences += 1,
                None => {
                    self.failure_index.insert(key.clone(), self.failures.len());
                    self.failures.push(FailureRecord {
                        operation: operation.to_string(),
                        status,
                        dedup_key: key,
                        message: failure_message(body),
                        first_seen: seq,
                        occurrences: 1,
                        mutated: mutation.is_some(),
                        mutation_kind: mutation,
                    });
                }
            }
        }
    }

    pub fn operations_processed(&self) -> usize {
        self.processed.len()
    }

    pub fn summary(&self) -> CoverageSummary {
        CoverageSummary {
            operations_total: self.operations.len(),
            operations_processed: self.processed.len(),
            processed: self.processed.iter().cloned().collect(),
            requests: self.requests,
            status_counts: self.status_counts.clone(),
            first_success: self.first_success.clone(),
            requests_to_full_coverage: self.full_coverage_at,
            failures: self.failures.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot serialize {what}: {source}")]
    Serialize {
        what: &'static str,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub report: PathBuf,
    pub spdg_json: PathBuf,
    pub spdg_dot: PathBuf,
    pub qtables: PathBuf,
    pub requests: PathBuf,
}

impl ReportPaths {
    pub fn in_dir(dir: &Path) -> Self {
        ReportPaths {
            report: dir.join(REPORT_FILE),
            spdg_json: dir.join(SPDG_JSON_FILE),
            spdg_dot: dir.join(SPDG_DOT_FILE),
            qtables: dir.join(QTABLES_FILE),
            requests: dir.join(REQUESTS_FILE),
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ReportError> {
    fs::write(path, bytes).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn pretty<T: Serialize>(what: &'static str, value: &T) -> Result<Vec<u8>, ReportError> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|source| ReportError::Serialize { what, source })?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes every report artifact into `dir`, creating it if needed.
pub fn emit_report(
    dir: &Path,
    summary: &CoverageSummary,
    spdg: &Spdg,
    qtables: &[QRow],
    requests: &[RequestLogEntry],
) -> Result<ReportPaths, ReportError> {
    fs::create_dir_all(dir).map_err(|source| ReportError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let paths = ReportPaths::in_dir(dir);
    write_file(&paths.report, &pretty("report", summary)?)?;
    write_file(&paths.spdg_json, &pretty("graph", &spdg.to_json())?)?;
    write_file(&paths.spdg_dot, spdg.to_dot().as_bytes())?;
    write_file(&paths.qtables, &pretty("q-tables", &qtables)?)?;
    let mut lines = Vec::new();
    for entry in requests {
        serde_json::to_writer(&mut lines, entry).map_err(|source| ReportError::Serialize {
            what: "request log",
            source,
        })?;
        lines.write_all(b"\n").expect("writing to a vector");
    }
    write_file(&paths.requests, &lines)?;
    Ok(paths)
}
