//! The four replica-side protocol state machines and the client request
//! loop.
//!
//! Replica handlers are pure-ish state transitions that return a list of
//! [`Effect`]s; the simulator turns effects into network sends, client acks
//! and trace events. Within one simulation everything runs on a single
//! event loop, so each handler executes atomically with respect to other
//! deliveries.

use crate::types::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Which consistency model a run executes under. Fixed for a simulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EngineKind {
    #[serde(rename = "lin")]
    Linearizable,
    #[serde(rename = "sc")]
    Sequential,
    #[serde(rename = "causal+")]
    CausalPlus,
    #[serde(rename = "eventual")]
    Eventual,
}

impl EngineKind {
    pub const ALL: [EngineKind; 4] =
        [EngineKind::Linearizable, EngineKind::Sequential, EngineKind::CausalPlus, EngineKind::Eventual];

    pub fn name(&self) -> &'static str {
        match self {
            EngineKind::Linearizable => "lin",
            EngineKind::Sequential => "sc",
            EngineKind::CausalPlus => "causal+",
            EngineKind::Eventual => "eventual",
        }
    }

    /// Tags and vector timestamps are live under causal+/eventual only.
    pub fn uses_tags(&self) -> bool {
        matches!(self, EngineKind::CausalPlus | EngineKind::Eventual)
    }
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EngineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lin" => Ok(EngineKind::Linearizable),
            "sc" => Ok(EngineKind::Sequential),
            "causal+" => Ok(EngineKind::CausalPlus),
            "eventual" => Ok(EngineKind::Eventual),
            other => Err(format!(
                "unknown model `{other}`; legal names are `lin`, `sc`, `causal+`, `eventual`"
            )),
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("client {0} invoked an operation while another is incomplete")]
    Busy(ReplicaId),
    #[error("client {0} received an Ack with no pending operation")]
    UnexpectedAck(ReplicaId),
}

/// What a replica wants done after handling a message.
#[derive(Clone, Debug)]
pub enum Effect {
    Tomcast(ProtocolMessage),
    Comcast(ProtocolMessage),
    Fifocast(ProtocolMessage),
    SendP2p { to: ReplicaId, msg: ProtocolMessage },
    /// Ack to the local client (value for Reads).
    Ack { value: Option<Value> },
    /// A write was processed locally; `applied` is false when the tag
    /// comparison rejected it.
    Applied { entry: WriteEntry, applied: bool },
    /// A marker surfaced at this replica; the checkpoint layer takes over.
    Marker { epoch: u64, vts: Option<VectorTimestamp> },
}

/// Store the write iff its tag is larger than the stored tag for the
/// variable; either way count the delivery in the replica's vector and
/// advance the Lamport clock. Returns whether the value was stored.
///
/// The vector advances only in the origin's slot: under FIFO-ordered
/// delivery a message's other components may mention writes the local
/// replica has not processed, so a componentwise merge would overstate the
/// applied counts that checkpoint recording relies on.
pub fn apply_if_newer(
    state: &mut ReplicaState,
    var: &str,
    value: Value,
    vts: &VectorTimestamp,
    tag: UpdateTag,
) -> bool {
    let origin = ReplicaId(tag.origin as usize);
    let seen = state.vts.get(origin).max(vts.get(origin));
    state.vts.set(origin, seen);
    state.lamport = state.lamport.max(tag.lamport) + 1;
    if tag > state.tag_of(var) {
        state.vars.insert(var.to_string(), TaggedValue { value, vts: vts.clone(), tag });
        true
    } else {
        false
    }
}

/// One replica: the local variable copies plus protocol bookkeeping.
#[derive(Clone, Debug)]
pub struct Replica {
    pub id: ReplicaId,
    pub model: EngineKind,
    pub state: ReplicaState,
    /// Own writes in issue order; entry k (0-based) is this replica's write
    /// with per-sender index k+1. Truncated to the checkpoint horizon on
    /// rollback.
    pub own_writes: Vec<WriteEntry>,
    /// The local client's incomplete operation, if any.
    pub pending: Option<Operation>,
    /// Checkpoint epochs already seen (eventual: first-delivery rule).
    pub seen_marker_epochs: std::collections::BTreeSet<u64>,
}

impl Replica {
    pub fn new(id: ReplicaId, model: EngineKind, n: usize) -> Self {
        Replica {
            id,
            model,
            state: ReplicaState::new(n),
            own_writes: Vec::new(),
            pending: None,
            seen_marker_epochs: std::collections::BTreeSet::new(),
        }
    }

    /// Client invoked an operation (steps w1/r1, w5/r5, w9/r7 by model).
    pub fn handle_client(&mut self, op: Operation) -> Result<Vec<Effect>, EngineError> {
        if self.pending.is_some() {
            return Err(EngineError::Busy(self.id));
        }
        let effects = match (self.model, &op.kind) {
            (EngineKind::Linearizable, OpKind::Write { var, value }) => {
                self.pending = Some(op.clone());
                vec![Effect::Tomcast(ProtocolMessage::plain(
                    self.id,
                    MessageKind::Write { var: var.clone(), value: *value, op_index: op.op_index },
                ))]
            }
            (EngineKind::Linearizable, OpKind::Read { var }) => {
                self.pending = Some(op.clone());
                vec![Effect::Tomcast(ProtocolMessage::plain(
                    self.id,
                    MessageKind::Read { var: var.clone() },
                ))]
            }
            (EngineKind::Sequential, OpKind::Write { var, value }) => {
                self.pending = Some(op.clone());
                vec![Effect::Tomcast(ProtocolMessage::plain(
                    self.id,
                    MessageKind::Write { var: var.clone(), value: *value, op_index: op.op_index },
                ))]
            }
            // SC/causal+/eventual answer Reads immediately from the local copy.
            (_, OpKind::Read { var }) => {
                vec![Effect::Ack { value: Some(self.state.read(var)) }]
            }
            (model, OpKind::Write { var, value }) => {
                debug_assert!(model.uses_tags());
                self.state.lamport += 1;
                let tag = UpdateTag::new(self.state.lamport, self.id);
                let mut vts = self.state.vts.clone();
                vts.bump(self.id);
                let entry = WriteEntry {
                    var: var.clone(),
                    value: *value,
                    vts: vts.clone(),
                    tag,
                    op_index: op.op_index,
                };
                self.own_writes.push(entry);
                self.pending = Some(op.clone());
                let msg = ProtocolMessage {
                    sender: self.id,
                    kind: MessageKind::Write { var: var.clone(), value: *value, op_index: op.op_index },
                    piggyback: Some(Piggyback { vts, tag }),
                };
                match model {
                    EngineKind::CausalPlus => vec![Effect::Comcast(msg)],
                    EngineKind::Eventual => vec![Effect::Fifocast(msg)],
                    _ => unreachable!(),
                }
            }
        };
        Ok(effects)
    }

    /// A Write multicast was delivered (steps w2-w4, w6-w8, w10-w12).
    pub fn on_write_delivery(&mut self, msg: &ProtocolMessage) -> Vec<Effect> {
        let MessageKind::Write { var, value, op_index } = &msg.kind else {
            panic!("on_write_delivery on non-write");
        };
        let mut effects = Vec::new();
        if self.model.uses_tags() {
            let pig = msg.piggyback.as_ref().expect("tagged write without piggyback");
            let applied = apply_if_newer(&mut self.state, var, *value, &pig.vts, pig.tag);
            effects.push(Effect::Applied {
                entry: WriteEntry {
                    var: var.clone(),
                    value: *value,
                    vts: pig.vts.clone(),
                    tag: pig.tag,
                    op_index: *op_index,
                },
                applied,
            });
        } else {
            // lin/sc write the value unconditionally; tags stay inert
            self.state.vars.insert(
                var.clone(),
                TaggedValue {
                    value: *value,
                    vts: VectorTimestamp::zero(self.state.n()),
                    tag: UpdateTag::BOTTOM,
                },
            );
            effects.push(Effect::Applied {
                entry: WriteEntry {
                    var: var.clone(),
                    value: *value,
                    vts: VectorTimestamp::zero(self.state.n()),
                    tag: UpdateTag::BOTTOM,
                    op_index: *op_index,
                },
                applied: true,
            });
        }
        // self-delivery of the client's write completes it; the Ack is
        // unconditional even when the tag comparison rejected the value
        if msg.sender == self.id {
            if let Some(p) = &self.pending {
                if p.kind.is_write() && p.op_index == *op_index {
                    self.pending = None;
                    effects.push(Effect::Ack { value: None });
                }
            }
        }
        effects
    }

    /// A totally-ordered Read multicast was delivered (lin only, steps
    /// r2-r4). Remote reads are discarded.
    pub fn on_read_delivery(&mut self, msg: &ProtocolMessage) -> Vec<Effect> {
        let MessageKind::Read { var } = &msg.kind else {
            panic!("on_read_delivery on non-read");
        };
        if msg.sender == self.id {
            self.pending = None;
            vec![Effect::Ack { value: Some(self.state.read(var)) }]
        } else {
            Vec::new()
        }
    }
}

fn mix_checksum(h: u64, op_index: usize, value: Option<Value>) -> u64 {
    let mut h = h ^ (op_index as u64).wrapping_mul(0x9e3779b97f4a7c15);
    h = h.rotate_left(17).wrapping_mul(0x100000001b3);
    h ^= value.map(|v| v as u64).unwrap_or(0xa5a5a5a5a5a5a5a5);
    h.wrapping_mul(0x100000001b3)
}

/// A client: its program, program counter and opaque local state (modeled
/// as a running checksum of responses plus an op counter, so rollback
/// correctness is observable).
#[derive(Clone, Debug)]
pub struct Client {
    pub id: ReplicaId,
    pub program: Vec<Operation>,
    /// Index of the next-or-incomplete operation.
    pub pc: usize,
    pub checksum: u64,
    pub ops_done: u64,
    /// An invocation is outstanding (no Ack yet).
    pub awaiting: bool,
    invoke_time: SimTime,
    /// Completed invocations surviving rollback truncation.
    pub records: Vec<OperationRecord>,
    /// Acks consumed per op_index over the whole run, including epochs later
    /// undone. Diagnostic for the exactly-once analysis.
    pub ack_counts: std::collections::BTreeMap<usize, u32>,
}

impl Client {
    pub fn new(id: ReplicaId, program: Vec<Operation>) -> Self {
        Client {
            id,
            program,
            pc: 0,
            checksum: 0,
            ops_done: 0,
            awaiting: false,
            invoke_time: 0,
            records: Vec::new(),
            ack_counts: std::collections::BTreeMap::new(),
        }
    }

    pub fn done(&self) -> bool {
        !self.awaiting && self.pc >= self.program.len()
    }

    /// Ready to issue: idle with program remaining.
    pub fn can_invoke(&self) -> bool {
        !self.awaiting && self.pc < self.program.len()
    }

    pub fn invoke(&mut self, now: SimTime) -> Operation {
        debug_assert!(self.can_invoke());
        self.awaiting = true;
        self.invoke_time = now;
        self.program[self.pc].clone()
    }

    /// Ack from the local replica: record the response, fold it into the
    /// local state and advance the program counter.
    pub fn on_ack(&mut self, value: Option<Value>, now: SimTime) -> Result<usize, EngineError> {
        if !self.awaiting {
            return Err(EngineError::UnexpectedAck(self.id));
        }
        let idx = self.pc;
        self.records.push(OperationRecord {
            client: self.id,
            op: self.program[idx].clone(),
            invoke_time: self.invoke_time,
            response_time: Some(now),
            response_value: value,
        });
        self.checksum = mix_checksum(self.checksum, idx, value);
        self.ops_done += 1;
        *self.ack_counts.entry(idx).or_insert(0) += 1;
        self.awaiting = false;
        self.pc = idx + 1;
        Ok(idx)
    }

    /// Marker on the client channel: record local state and the program
    /// counter. While awaiting an Ack, `pc` already names the incomplete
    /// operation, which re-runs after rollback.
    pub fn on_marker(&self) -> ClientSnapshot {
        ClientSnapshot { checksum: self.checksum, ops_done: self.ops_done, pc: self.pc }
    }

    /// Whole-system rollback: restore local state and pc, drop records of
    /// operations whose effects are undone.
    pub fn restore(&mut self, snap: &ClientSnapshot) {
        self.checksum = snap.checksum;
        self.ops_done = snap.ops_done;
        self.pc = snap.pc;
        self.awaiting = false;
        self.records.retain(|r| r.op.op_index < snap.pc);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rs(n: usize) -> ReplicaState {
        ReplicaState::new(n)
    }

    fn vts(v: Vec<u64>) -> VectorTimestamp {
        VectorTimestamp(v)
    }

    fn tag(l: u64, o: usize) -> UpdateTag {
        UpdateTag::new(l, ReplicaId(o))
    }

    #[test]
    fn apply_if_newer_examples() {
        let mut s = rs(2);
        assert!(apply_if_newer(&mut s, "x", 1, &vts(vec![0, 1]), tag(2, 1)));
        // incoming (3, r0) beats stored (2, r1)
        assert!(apply_if_newer(&mut s, "x", 2, &vts(vec![1, 0]), tag(3, 0)));
        assert_eq!(s.read("x"), 2);
        // incoming (2, r0) loses to stored (3, r0): lexicographic tie-break
        let mut s = rs(2);
        assert!(apply_if_newer(&mut s, "x", 1, &vts(vec![0, 1]), tag(2, 1)));
        assert!(!apply_if_newer(&mut s, "x", 9, &vts(vec![1, 0]), tag(2, 0)));
        assert_eq!(s.read("x"), 1);
        // redelivery of an identical tag is idempotent: EQ is not larger
        assert!(!apply_if_newer(&mut s, "x", 1, &vts(vec![0, 1]), tag(2, 1)));
        assert_eq!(s.read("x"), 1);
    }

    #[test]
    fn apply_if_newer_is_order_independent() {
        // final TaggedValue = max-tag write regardless of application order
        let writes =
            [(10, vts(vec![1, 0]), tag(1, 0)), (20, vts(vec![0, 1]), tag(1, 1)), (30, vts(vec![2, 0]), tag(2, 0))];
        let apply_in = |order: &[usize]| {
            let mut s = rs(2);
            for &i in order {
                let (v, ref ts, t) = writes[i];
                apply_if_newer(&mut s, "x", v, ts, t);
            }
            s.vars.get("x").cloned()
        };
        let expect = apply_in(&[0, 1, 2]);
        for order in [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            assert_eq!(apply_in(&order), expect);
        }
        assert_eq!(expect.unwrap().value, 30);
    }

    #[test]
    fn second_invocation_while_pending_is_a_protocol_violation() {
        let mut r = Replica::new(ReplicaId(0), EngineKind::Linearizable, 1);
        let op = Operation { kind: OpKind::Write { var: "x".into(), value: 1 }, op_index: 0 };
        r.handle_client(op.clone()).unwrap();
        assert!(matches!(r.handle_client(op), Err(EngineError::Busy(_))));
    }

    #[test]
    fn sc_read_on_fresh_system_returns_zero() {
        let mut r = Replica::new(ReplicaId(0), EngineKind::Sequential, 2);
        let effects = r
            .handle_client(Operation { kind: OpKind::Read { var: "x".into() }, op_index: 0 })
            .unwrap();
        assert!(matches!(effects[0], Effect::Ack { value: Some(0) }));
    }

    #[test]
    fn lin_remote_read_delivery_is_discarded() {
        let mut r = Replica::new(ReplicaId(2), EngineKind::Linearizable, 3);
        let msg = ProtocolMessage::plain(ReplicaId(0), MessageKind::Read { var: "x".into() });
        let before = r.state.clone();
        assert!(r.on_read_delivery(&msg).is_empty());
        assert_eq!(r.state, before);
    }

    #[test]
    fn client_empty_program_terminates_immediately() {
        let c = Client::new(ReplicaId(0), vec![]);
        assert!(c.done());
        assert_eq!(c.pc, 0);
    }

    #[test]
    fn client_marker_while_awaiting_names_incomplete_op() {
        let ops: Vec<Operation> = (0..6)
            .map(|i| Operation { kind: OpKind::Read { var: "x".into() }, op_index: i })
            .collect();
        let mut c = Client::new(ReplicaId(0), ops);
        for _ in 0..5 {
            c.invoke(1);
            c.on_ack(Some(0), 2).unwrap();
        }
        // idle at op 5
        assert_eq!(c.on_marker().pc, 5);
        c.invoke(3);
        // awaiting ack for op 5: pc still names it
        assert_eq!(c.on_marker().pc, 5);
    }
}
