//! Run traces: one JSON object per line, stable field order, byte-identical
//! for identical (scenario, seed). The post-hoc checkers consume traces;
//! golden-trace tests pin them.

use crate::types::{OpKind, Value};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// Variable content restored by a rollback, with the metadata of the write
/// that produced it (`origin = -1` for the initial value).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestoredVar {
    pub value: Value,
    pub origin: i64,
    pub windex: u64,
    pub lamport: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceKind {
    Invoke {
        client: usize,
        op_index: usize,
        op: OpKind,
    },
    Response {
        client: usize,
        op_index: usize,
        value: Option<Value>,
    },
    /// A write was processed at a replica; `applied` is false when the tag
    /// comparison rejected it. `windex` is the per-origin write index, `vts`
    /// the piggybacked vector.
    Apply {
        replica: usize,
        var: String,
        value: Value,
        origin: i64,
        windex: u64,
        lamport: u64,
        op_index: usize,
        vts: Vec<u64>,
        applied: bool,
    },
    MarkerDelivered {
        replica: usize,
        epoch: u64,
        initiator: usize,
        marker_vts: Option<Vec<u64>>,
        local_vts: Vec<u64>,
    },
    MarkerForwarded {
        replica: usize,
        epoch: u64,
    },
    MarkerDuplicate {
        replica: usize,
        epoch: u64,
    },
    ClientRecorded {
        client: usize,
        pc: usize,
        checksum: u64,
    },
    CheckpointInitiated {
        epoch: u64,
        initiator: usize,
    },
    CheckpointRejected {
        initiator: usize,
    },
    CheckpointComplete {
        epoch: u64,
        full_states: u64,
        incremental_updates: u64,
        bytes: u64,
    },
    Crash,
    /// Whole-system rollback to `epoch`. `baseline[j]` is the per-origin
    /// write count incorporated by the restoration (initiator state plus
    /// incremental replay); `restored_vars` is the identical post-replay
    /// variable map of every replica.
    Rollback {
        epoch: u64,
        baseline: Vec<u64>,
        client_pcs: Vec<usize>,
        restored_vars: BTreeMap<String, RestoredVar>,
    },
    AuditViolation {
        replica: usize,
        detail: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: u64,
    pub seq: u64,
    #[serde(flatten)]
    pub kind: TraceKind,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace io: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
}

impl Trace {
    pub fn push(&mut self, time: u64, seq: u64, kind: TraceKind) {
        self.events.push(TraceEvent { time, seq, kind });
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ev in &self.events {
            out.push_str(&serde_json::to_string(ev).expect("trace event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), TraceError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }

    pub fn from_jsonl(text: &str) -> Result<Trace, TraceError> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let ev = serde_json::from_str(line)
                .map_err(|source| TraceError::Parse { line: i + 1, source })?;
            events.push(ev);
        }
        Ok(Trace { events })
    }

    pub fn read_jsonl(path: &Path) -> Result<Trace, TraceError> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }
}
