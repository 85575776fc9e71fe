//! Shared vocabulary: variables, values, operations, timestamps, messages
//! and node identity used by every other module.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

/// Shared-memory values are 64-bit signed integers.
pub type Value = i64;
/// Variable names are short strings.
pub type VarName = String;
/// Simulated time in integer ticks.
pub type SimTime = u64;

/// Index of a node in `[0, n)`. Each node hosts exactly one client and one
/// replica with the same index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReplicaId(pub usize);

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// A client-visible shared memory operation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpKind {
    Write { var: VarName, value: Value },
    Read { var: VarName },
}

impl OpKind {
    pub fn var(&self) -> &str {
        match self {
            OpKind::Write { var, .. } | OpKind::Read { var } => var,
        }
    }

    pub fn is_write(&self) -> bool {
        matches!(self, OpKind::Write { .. })
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpKind::Write { var, value } => write!(f, "W {var} {value}"),
            OpKind::Read { var } => write!(f, "R {var}"),
        }
    }
}

/// One entry of a client program. `op_index` is the program-counter value
/// that names the operation; it is strictly increasing within a client.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Operation {
    pub kind: OpKind,
    pub op_index: usize,
}

/// A completed (or still open) client invocation: the unit of history
/// checking.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationRecord {
    pub client: ReplicaId,
    pub op: Operation,
    pub invoke_time: SimTime,
    pub response_time: Option<SimTime>,
    pub response_value: Option<Value>,
}

/// Per-origin count of applied writes.
///
/// `counts[j]` is the number of writes originated by replica `j` that have
/// been applied locally. Componentwise monotonic over a replica's lifetime.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VectorTimestamp(pub Vec<u64>);

impl VectorTimestamp {
    pub fn zero(n: usize) -> Self {
        VectorTimestamp(vec![0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, id: ReplicaId) -> u64 {
        self.0[id.0]
    }

    pub fn set(&mut self, id: ReplicaId, v: u64) {
        self.0[id.0] = v;
    }

    pub fn bump(&mut self, id: ReplicaId) {
        self.0[id.0] += 1;
    }

    /// Componentwise `self[k] <= other[k]`. Lengths must match.
    pub fn leq(&self, other: &VectorTimestamp) -> bool {
        assert_eq!(self.len(), other.len(), "vector timestamp length mismatch");
        self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }
}

impl fmt::Display for VectorTimestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, "]")
    }
}

/// `true` iff `a[k] <= b[k]` for all `k`.
pub fn vts_leq(a: &VectorTimestamp, b: &VectorTimestamp) -> bool {
    a.leq(b)
}

/// (Lamport timestamp, origin replica id) pair. The derived lexicographic
/// order is the total order used for write convergence; `BOTTOM` is the
/// sentinel tag of never-written variables and sorts below every real tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UpdateTag {
    pub lamport: u64,
    pub origin: i64,
}

impl UpdateTag {
    pub const BOTTOM: UpdateTag = UpdateTag { lamport: 0, origin: -1 };

    pub fn new(lamport: u64, origin: ReplicaId) -> Self {
        UpdateTag { lamport, origin: origin.0 as i64 }
    }

    pub fn is_bottom(&self) -> bool {
        *self == Self::BOTTOM
    }
}

/// Lexicographic comparison on (lamport, origin).
pub fn compare_tags(a: UpdateTag, b: UpdateTag) -> Ordering {
    a.cmp(&b)
}

/// A stored variable copy together with the metadata of the write that
/// produced it. Tags are unused under linearizability and sequential
/// consistency.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedValue {
    pub value: Value,
    pub vts: VectorTimestamp,
    pub tag: UpdateTag,
}

impl TaggedValue {
    /// Every variable starts as 0 with the BOTTOM tag and a zero vector, so
    /// the first real write always applies.
    pub fn initial(n: usize) -> Self {
        TaggedValue { value: 0, vts: VectorTimestamp::zero(n), tag: UpdateTag::BOTTOM }
    }
}

/// State of one shared-memory replica: the variable copies plus its vector
/// timestamp and Lamport clock.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicaState {
    pub vars: BTreeMap<VarName, TaggedValue>,
    pub vts: VectorTimestamp,
    pub lamport: u64,
}

impl ReplicaState {
    pub fn new(n: usize) -> Self {
        ReplicaState { vars: BTreeMap::new(), vts: VectorTimestamp::zero(n), lamport: 0 }
    }

    pub fn n(&self) -> usize {
        self.vts.len()
    }

    pub fn read(&self, var: &str) -> Value {
        self.vars.get(var).map(|t| t.value).unwrap_or(0)
    }

    pub fn tag_of(&self, var: &str) -> UpdateTag {
        self.vars.get(var).map(|t| t.tag).unwrap_or(UpdateTag::BOTTOM)
    }
}

/// One write as issued by a replica, in issue order. `vts[origin]` is the
/// per-sender write index used by the checkpoint recording rule.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteEntry {
    pub var: VarName,
    pub value: Value,
    pub vts: VectorTimestamp,
    pub tag: UpdateTag,
    pub op_index: usize,
}

/// Client snapshot recorded at marker time: the opaque local state
/// (a running checksum of responses plus an op counter) and the program
/// counter of the next-or-incomplete operation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientSnapshot {
    pub checksum: u64,
    pub ops_done: u64,
    pub pc: usize,
}

impl ClientSnapshot {
    pub fn initial() -> Self {
        ClientSnapshot { checksum: 0, ops_done: 0, pc: 0 }
    }
}

/// Timestamps piggybacked on causal/FIFO write multicasts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Piggyback {
    pub vts: VectorTimestamp,
    pub tag: UpdateTag,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MessageKind {
    Write { var: VarName, value: Value, op_index: usize },
    Read { var: VarName },
    /// Marker carries the initiator's vector timestamp exactly when the
    /// model is causal+ or eventual.
    Marker { epoch: u64, vts: Option<VectorTimestamp> },
    ClientRequest { op: Operation },
    Ack { value: Option<Value> },
    MarkerAck,
    CheckpointDone { epoch: u64, client: ClientSnapshot, incrementals: Vec<WriteEntry> },
    IncrementalReplay { writes: Vec<WriteEntry> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolMessage {
    pub sender: ReplicaId,
    pub kind: MessageKind,
    pub piggyback: Option<Piggyback>,
}

impl ProtocolMessage {
    pub fn plain(sender: ReplicaId, kind: MessageKind) -> Self {
        ProtocolMessage { sender, kind, piggyback: None }
    }
}
