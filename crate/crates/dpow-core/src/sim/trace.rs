//! Line-delimited JSON traces and deterministic replay.
//!
//! A trace is a header line naming the format version, the kind of run,
//! and the full configuration, followed by one JSON line per outcome
//! record. Because every simulation is a pure function of its config,
//! replay re-runs the config and compares the fresh lines with the stored
//! ones; any divergence is reported with its line number.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{campaign, exp1, exp2, SimConfig, SimError};

pub const TRACE_VERSION: &str = "dpow-trace-1";

/// What kind of run a trace captures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceKind {
    MineBench,
    PbftTable,
    Campaign,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TraceHeader {
    version: String,
    kind: TraceKind,
    config: SimConfig,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed trace line {line}: {source}")]
    Malformed {
        line: usize,
        source: serde_json::Error,
    },
    #[error("trace version {found:?} unsupported (this build reads {expected:?})")]
    VersionMismatch { found: String, expected: &'static str },
    #[error("trace is empty")]
    Empty,
    #[error("replay diverged at line {line}: stored {stored}, recomputed {recomputed}")]
    Diverged {
        line: usize,
        stored: String,
        recomputed: String,
    },
    #[error("config rejected: {0}")]
    BadConfig(#[from] SimError),
}

/// Render the outcome lines for a run of `kind` under `config`.
fn run_lines(kind: TraceKind, config: &SimConfig) -> Result<Vec<String>, TraceError> {
    config.validate()?;
    let mut lines = Vec::new();
    match kind {
        TraceKind::MineBench => {
            let (records, summary) = exp1::run_experiment_1(config);
            for r in &records {
                lines.push(serde_json::to_string(r).expect("serializable record"));
            }
            lines.push(serde_json::to_string(&summary).expect("serializable summary"));
        }
        TraceKind::PbftTable => {
            for row in exp2::run_experiment_2(config) {
                lines.push(serde_json::to_string(&row).expect("serializable row"));
            }
        }
        TraceKind::Campaign => {
            let (report, records) = campaign::run_safety_campaign(config)?;
            for r in &records {
                lines.push(serde_json::to_string(r).expect("serializable record"));
            }
            lines.push(serde_json::to_string(&report).expect("serializable report"));
        }
    }
    Ok(lines)
}

/// Run under `config` and write the full trace to `path`.
pub fn write_trace(path: &Path, kind: TraceKind, config: &SimConfig) -> Result<(), TraceError> {
    let header = TraceHeader {
        version: TRACE_VERSION.to_string(),
        kind,
        config: config.clone(),
    };
    let lines = run_lines(kind, config)?;
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", serde_json::to_string(&header).expect("serializable header"))?;
    for line in &lines {
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Re-run the trace's config and compare every outcome line.
///
/// Returns the number of verified outcome lines.
pub fn replay_trace(path: &Path) -> Result<usize, TraceError> {
    let file = BufReader::new(File::open(path)?);
    let mut stored = Vec::new();
    for line in file.lines() {
        stored.push(line?);
    }
    let header_line = stored.first().ok_or(TraceError::Empty)?;
    let header: TraceHeader =
        serde_json::from_str(header_line).map_err(|source| TraceError::Malformed {
            line: 1,
            source,
        })?;
    if header.version != TRACE_VERSION {
        return Err(TraceError::VersionMismatch {
            found: header.version,
            expected: TRACE_VERSION,
        });
    }
    let fresh = run_lines(header.kind, &header.config)?;
    let stored_body = &stored[1..];
    let n = stored_body.len().max(fresh.len());
    for i in 0..n {
        let old = stored_body.get(i).map(String::as_str).unwrap_or("<missing>");
        let new = fresh.get(i).map(String::as_str).unwrap_or("<missing>");
        if old != new {
            return Err(TraceError::Diverged {
                line: i + 2,
                stored: truncate(old),
                recomputed: truncate(new),
            });
        }
    }
    Ok(fresh.len())
}

fn truncate(s: &str) -> String {
    const MAX: usize = 120;
    if s.len() <= MAX {
        s.to_string()
    } else {
        format!("{}...", &s[..MAX])
    }
}
