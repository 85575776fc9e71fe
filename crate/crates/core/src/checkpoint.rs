//! Checkpoint records, completion tracking, cost accounting and
//! persistence. Marker propagation itself rides the consistency engines'
//! multicast disciplines; the simulator routes marker deliveries through
//! this module's bookkeeping.
//!
//! Every model records exactly one full replica state (the initiator's).
//! Under causal+/eventual, each other replica additionally records the
//! incremental list of its own writes the initiator had not seen.

use crate::engine::apply_if_newer;
use crate::types::{ClientSnapshot, ReplicaId, ReplicaState, VectorTimestamp, WriteEntry};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// A completed (or in-assembly) checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub epoch: u64,
    pub initiator: ReplicaId,
    pub initiator_state: ReplicaState,
    pub clients: Vec<ClientSnapshot>,
    /// Per replica j: j's own recorded writes with per-sender index greater
    /// than V_I[j], in issue order. Always empty for lin/sc and for the
    /// initiator's own slot.
    pub incrementals: Vec<Vec<WriteEntry>>,
    pub complete: bool,
}

impl CheckpointRecord {
    /// Epoch 0: the implicit checkpoint of the initial system state, so
    /// rollback is always defined.
    pub fn initial(n: usize) -> Self {
        CheckpointRecord {
            epoch: 0,
            initiator: ReplicaId(0),
            initiator_state: ReplicaState::new(n),
            clients: vec![ClientSnapshot::initial(); n],
            incrementals: vec![Vec::new(); n],
            complete: true,
        }
    }

    /// Per-origin write count incorporated once the record is fully
    /// restored: V_I[j] plus j's incremental list length (= V_j[j] at j's
    /// marker delivery).
    pub fn baseline(&self) -> VectorTimestamp {
        let mut v = self.initiator_state.vts.clone();
        for (j, inc) in self.incrementals.iter().enumerate() {
            v.0[j] = v.0[j].max(self.initiator_state.vts.0[j] + inc.len() as u64);
        }
        v
    }

    /// All recorded incremental lists in the fixed deterministic replay
    /// order: origin-major, each list in issue order.
    pub fn replay_entries(&self) -> Vec<WriteEntry> {
        self.incrementals.iter().flatten().cloned().collect()
    }

    /// The state every replica holds right after rollback: the initiator's
    /// recorded state with all incrementals replayed through the
    /// convergence rule.
    pub fn restored_replica_state(&self) -> ReplicaState {
        let mut s = self.initiator_state.clone();
        for w in self.replay_entries() {
            apply_if_newer(&mut s, &w.var, w.value, &w.vts, w.tag);
        }
        s
    }
}

/// What a completed checkpoint cost to record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointCostReport {
    pub epoch: u64,
    pub full_replica_states_recorded: u64,
    pub incremental_update_count: u64,
    pub bytes_estimate: u64,
}

/// Counts full states (always 1: the initiator's), incremental updates and
/// a serialized-size byte estimate.
pub fn cost_report(record: &CheckpointRecord) -> CheckpointCostReport {
    let inc: u64 = record.incrementals.iter().map(|l| l.len() as u64).sum();
    let bytes = serde_json::to_vec(&record.initiator_state).map(|v| v.len()).unwrap_or(0)
        + serde_json::to_vec(&record.incrementals).map(|v| v.len()).unwrap_or(0)
        + serde_json::to_vec(&record.clients).map(|v| v.len()).unwrap_or(0);
    CheckpointCostReport {
        epoch: record.epoch,
        full_replica_states_recorded: 1,
        incremental_update_count: inc,
        bytes_estimate: bytes as u64,
    }
}

/// A checkpoint still collecting reports.
#[derive(Clone, Debug)]
pub struct PendingCheckpoint {
    pub epoch: u64,
    pub initiator: ReplicaId,
    pub initiator_state: Option<ReplicaState>,
    pub clients: Vec<Option<ClientSnapshot>>,
    pub incrementals: Vec<Option<Vec<WriteEntry>>>,
}

impl PendingCheckpoint {
    fn ready(&self) -> bool {
        self.initiator_state.is_some()
            && self.clients.iter().all(Option::is_some)
            && self.incrementals.iter().all(Option::is_some)
    }

    fn into_record(self) -> CheckpointRecord {
        CheckpointRecord {
            epoch: self.epoch,
            initiator: self.initiator,
            initiator_state: self.initiator_state.expect("checked by ready()"),
            clients: self.clients.into_iter().map(Option::unwrap).collect(),
            incrementals: self.incrementals.into_iter().map(Option::unwrap).collect(),
            complete: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("a checkpoint is already in progress (epoch {0})")]
    Overlapping(u64),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint file parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported checkpoint file version {0}")]
    Version(u32),
}

/// Completion detection: every replica reports for the epoch (the initiator
/// locally, others via CheckpointDone); the record becomes the rollback
/// target only once all reports are in.
#[derive(Debug)]
pub struct CheckpointStore {
    n: usize,
    next_epoch: u64,
    pub pending: Option<PendingCheckpoint>,
    pub completed: Vec<CheckpointRecord>,
}

impl CheckpointStore {
    pub fn new(n: usize) -> Self {
        CheckpointStore { n, next_epoch: 1, pending: None, completed: Vec::new() }
    }

    /// One checkpoint in flight at a time; concurrent initiations rejected.
    pub fn begin(&mut self, initiator: ReplicaId) -> Result<u64, CheckpointError> {
        if let Some(p) = &self.pending {
            return Err(CheckpointError::Overlapping(p.epoch));
        }
        let epoch = self.next_epoch;
        self.next_epoch += 1;
        self.pending = Some(PendingCheckpoint {
            epoch,
            initiator,
            initiator_state: None,
            clients: vec![None; self.n],
            incrementals: vec![None; self.n],
        });
        Ok(epoch)
    }

    /// Install replica j's contribution for the pending epoch. Stale or
    /// unknown epochs are ignored (their checkpoint was discarded by a
    /// crash).
    pub fn report(
        &mut self,
        epoch: u64,
        j: ReplicaId,
        client: ClientSnapshot,
        incrementals: Vec<WriteEntry>,
        initiator_state: Option<ReplicaState>,
    ) {
        let Some(p) = self.pending.as_mut() else { return };
        if p.epoch != epoch {
            return;
        }
        p.clients[j.0] = Some(client);
        p.incrementals[j.0] = Some(incrementals);
        if let Some(s) = initiator_state {
            p.initiator_state = Some(s);
        }
    }

    /// Persist the record once all replicas and clients have reported.
    pub fn try_complete(&mut self) -> Option<&CheckpointRecord> {
        if self.pending.as_ref().is_some_and(|p| p.ready()) {
            let p = self.pending.take().unwrap();
            self.completed.push(p.into_record());
            self.completed.last()
        } else {
            None
        }
    }

    /// Crash before completion: the in-assembly record is discarded and the
    /// previous complete record remains the target.
    pub fn discard_pending(&mut self) {
        self.pending = None;
    }

    /// The rollback target: most recent successfully completed checkpoint,
    /// or the implicit epoch-0 initial state.
    pub fn latest(&self) -> CheckpointRecord {
        self.completed.last().cloned().unwrap_or_else(|| CheckpointRecord::initial(self.n))
    }
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    record: CheckpointRecord,
}

/// Persist a checkpoint record so rollback can be exercised across process
/// restarts.
pub fn save_checkpoint(path: &Path, record: &CheckpointRecord) -> Result<(), CheckpointError> {
    let file = CheckpointFile { version: CHECKPOINT_FORMAT_VERSION, record: record.clone() };
    std::fs::write(path, serde_json::to_vec_pretty(&file)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointRecord, CheckpointError> {
    let file: CheckpointFile = serde_json::from_slice(&std::fs::read(path)?)?;
    if file.version != CHECKPOINT_FORMAT_VERSION {
        return Err(CheckpointError::Version(file.version));
    }
    Ok(file.record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::UpdateTag;

    #[test]
    fn initial_record_is_complete_and_empty() {
        let r = CheckpointRecord::initial(3);
        assert!(r.complete);
        assert_eq!(r.baseline(), VectorTimestamp::zero(3));
        let c = cost_report(&r);
        assert_eq!(c.full_replica_states_recorded, 1);
        assert_eq!(c.incremental_update_count, 0);
    }

    #[test]
    fn overlapping_initiations_rejected() {
        let mut s = CheckpointStore::new(2);
        let e = s.begin(ReplicaId(0)).unwrap();
        assert_eq!(e, 1);
        assert!(matches!(s.begin(ReplicaId(0)), Err(CheckpointError::Overlapping(1))));
    }

    #[test]
    fn completes_only_after_all_reports() {
        let mut s = CheckpointStore::new(2);
        let e = s.begin(ReplicaId(0)).unwrap();
        s.report(e, ReplicaId(0), ClientSnapshot::initial(), vec![], Some(ReplicaState::new(2)));
        assert!(s.try_complete().is_none());
        s.report(e, ReplicaId(1), ClientSnapshot::initial(), vec![], None);
        assert!(s.try_complete().is_some());
        assert_eq!(s.latest().epoch, 1);
    }

    #[test]
    fn crash_before_completion_targets_prior_record() {
        let mut s = CheckpointStore::new(1);
        let e = s.begin(ReplicaId(0)).unwrap();
        s.report(e, ReplicaId(0), ClientSnapshot::initial(), vec![], Some(ReplicaState::new(1)));
        s.try_complete().unwrap();
        let e2 = s.begin(ReplicaId(0)).unwrap();
        assert_eq!(e2, 2);
        s.discard_pending();
        assert_eq!(s.latest().epoch, 1);
    }

    #[test]
    fn checkpoint_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let rec = CheckpointRecord::initial(2);
        save_checkpoint(&path, &rec).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), rec);
    }

    #[test]
    fn restored_state_replays_incrementals_last_writer_wins() {
        let mut rec = CheckpointRecord::initial(2);
        rec.incrementals[0].push(WriteEntry {
            var: "x".into(),
            value: 1,
            vts: VectorTimestamp(vec![1, 0]),
            tag: UpdateTag::new(1, ReplicaId(0)),
            op_index: 0,
        });
        rec.incrementals[1].push(WriteEntry {
            var: "x".into(),
            value: 2,
            vts: VectorTimestamp(vec![0, 1]),
            tag: UpdateTag::new(1, ReplicaId(1)),
            op_index: 0,
        });
        let s = rec.restored_replica_state();
        // (1, r1) > (1, r0): last writer wins
        assert_eq!(s.read("x"), 2);
        assert_eq!(rec.baseline(), VectorTimestamp(vec![1, 1]));
    }
}
