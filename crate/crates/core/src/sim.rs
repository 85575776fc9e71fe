//! Deterministic discrete-event simulation: one event loop drives clients,
//! replicas, the network and the checkpoint/rollback machinery. Identical
//! (config, seed) yields an identical event sequence and a byte-identical
//! trace.

use crate::checkpoint::{cost_report, CheckpointStore};
use crate::engine::{Client, Effect, EngineError, EngineKind, Replica};
use crate::net::{Delivery, Network, SendRequest};
use crate::trace::{RestoredVar, Trace, TraceKind};
use crate::types::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::cmp::Reverse;
use std::collections::BinaryHeap;
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    Deliver { from: ReplicaId, to: ReplicaId, generation: u64 },
    ClientStep { client: ReplicaId },
}

/// Entry in the event queue; pops in (fire_time, seq) order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimEvent {
    pub fire_time: SimTime,
    pub seq: u64,
    pub action: Action,
}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.fire_time, self.seq).cmp(&(other.fire_time, other.seq))
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub model: EngineKind,
    pub n: usize,
    pub programs: Vec<Vec<Operation>>,
    pub seed: u64,
    /// Per-hop latency is drawn uniformly from [1, max_latency] ticks.
    pub max_latency: u64,
    /// Event-count triggers for checkpoint initiations; strictly increasing.
    pub checkpoint_at: Vec<u64>,
    /// Event-count trigger for the whole-system crash.
    pub crash_at: Option<u64>,
    pub initiator: ReplicaId,
    /// Stop at the crash instead of rolling back in-process (restart-from-
    /// file testing).
    pub halt_at_crash: bool,
    /// Fault-injection hook: deliver causal+ markers over the FIFO multicast
    /// instead of the causal one, to exercise the marker inequality audit.
    pub marker_fifo_bug: bool,
    /// Clock offset for restarted runs so operation records keep a single
    /// real-time axis across a restart.
    pub start_time: SimTime,
}

impl SimConfig {
    pub fn new(model: EngineKind, n: usize, programs: Vec<Vec<Operation>>, seed: u64) -> Self {
        SimConfig {
            model,
            n,
            programs,
            seed,
            max_latency: 5,
            checkpoint_at: Vec::new(),
            crash_at: None,
            initiator: ReplicaId(0),
            halt_at_crash: false,
            marker_fifo_bug: false,
            start_time: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("protocol violation at t={time}: {source}")]
    Protocol { time: SimTime, source: EngineError },
}

pub struct Simulator {
    pub cfg: SimConfig,
    pub time: SimTime,
    next_seq: u64,
    event_count: u64,
    heap: BinaryHeap<Reverse<SimEvent>>,
    pub net: Network,
    pub replicas: Vec<Replica>,
    pub clients: Vec<Client>,
    pub ckpts: CheckpointStore,
    pub trace: Trace,
    rng: ChaCha8Rng,
    ckpt_triggers: std::collections::VecDeque<u64>,
    crash_trigger: Option<u64>,
    /// Marker inequality violations observed during the run.
    pub audit_violations: Vec<String>,
    pub halted_at_crash: bool,
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Self {
        let n = cfg.n;
        let replicas = (0..n).map(|i| Replica::new(ReplicaId(i), cfg.model, n)).collect();
        let clients = (0..n)
            .map(|i| Client::new(ReplicaId(i), cfg.programs.get(i).cloned().unwrap_or_default()))
            .collect();
        let mut sim = Simulator {
            time: cfg.start_time,
            next_seq: 0,
            event_count: 0,
            heap: BinaryHeap::new(),
            net: Network::new(n),
            replicas,
            clients,
            ckpts: CheckpointStore::new(n),
            trace: Trace::default(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            ckpt_triggers: cfg.checkpoint_at.iter().copied().collect(),
            crash_trigger: cfg.crash_at,
            audit_violations: Vec::new(),
            halted_at_crash: false,
            cfg,
        };
        sim.schedule_client_steps();
        sim
    }

    /// Build a simulator whose replicas and clients start from a restored
    /// checkpoint record (process-restart recovery).
    pub fn from_checkpoint(cfg: SimConfig, record: &crate::checkpoint::CheckpointRecord) -> Self {
        let mut sim = Simulator::new(cfg);
        sim.heap.clear();
        sim.restore_from(record);
        sim.schedule_client_steps();
        sim
    }

    fn schedule_client_steps(&mut self) {
        for i in 0..self.cfg.n {
            if self.clients[i].can_invoke() {
                let think = self.rng.gen_range(1..=self.cfg.max_latency);
                self.schedule(self.time + think, Action::ClientStep { client: ReplicaId(i) });
            }
        }
    }

    fn schedule(&mut self, fire_time: SimTime, action: Action) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(SimEvent { fire_time, seq, action }));
    }

    fn schedule_send(&mut self, req: SendRequest) {
        let latency = self.rng.gen_range(1..=self.cfg.max_latency);
        let t = self.net.enqueue(req.from, req.to, req.payload, self.time + latency);
        self.schedule(
            t,
            Action::Deliver { from: req.from, to: req.to, generation: self.net.generation },
        );
    }

    fn push_trace(&mut self, kind: TraceKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.trace.push(self.time, seq, kind);
    }

    /// Run the event loop to quiescence (or to the crash when configured to
    /// halt there).
    pub fn run(&mut self) -> Result<(), SimError> {
        loop {
            if self.ckpt_triggers.front() == Some(&self.event_count) {
                self.ckpt_triggers.pop_front();
                self.initiate_checkpoint();
            }
            if self.crash_trigger == Some(self.event_count) {
                self.crash_trigger = None;
                self.push_trace(TraceKind::Crash);
                self.ckpts.discard_pending();
                if self.cfg.halt_at_crash {
                    self.halted_at_crash = true;
                    return Ok(());
                }
                self.rollback();
            }
            let Some(Reverse(ev)) = self.heap.pop() else {
                // quiescent with triggers still pending: fast-forward the
                // event counter so they fire rather than silently lapse
                if let Some(&t) = self.ckpt_triggers.front() {
                    self.event_count = t;
                    continue;
                }
                if let Some(t) = self.crash_trigger {
                    self.event_count = t;
                    continue;
                }
                break;
            };
            self.time = ev.fire_time;
            self.event_count += 1;
            match ev.action {
                Action::ClientStep { client } => self.client_step(client)?,
                Action::Deliver { from, to, generation } => {
                    if generation != self.net.generation {
                        continue; // cleared by a rollback
                    }
                    let (deliveries, sends) = self.net.arrive(from, to);
                    for s in sends {
                        self.schedule_send(s);
                    }
                    for d in deliveries {
                        self.dispatch_delivery(d)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn client_step(&mut self, client: ReplicaId) -> Result<(), SimError> {
        let c = client.0;
        if !self.clients[c].can_invoke() {
            return Ok(()); // stale step from before a rollback
        }
        let op = self.clients[c].invoke(self.time);
        self.push_trace(TraceKind::Invoke { client: c, op_index: op.op_index, op: op.kind.clone() });
        let effects = self.replicas[c]
            .handle_client(op)
            .map_err(|source| SimError::Protocol { time: self.time, source })?;
        self.apply_effects(c, effects)
    }

    fn apply_effects(&mut self, node: usize, effects: Vec<Effect>) -> Result<(), SimError> {
        for e in effects {
            match e {
                Effect::Tomcast(msg) => {
                    let req = self.net.tomcast(ReplicaId(node), msg);
                    self.schedule_send(req);
                }
                Effect::Comcast(msg) => {
                    for req in self.net.comcast(ReplicaId(node), msg) {
                        self.schedule_send(req);
                    }
                }
                Effect::Fifocast(msg) => {
                    for req in self.net.fifocast(ReplicaId(node), msg) {
                        self.schedule_send(req);
                    }
                }
                Effect::SendP2p { to, msg } => {
                    let req = self.net.send_p2p(ReplicaId(node), to, msg);
                    self.schedule_send(req);
                }
                Effect::Ack { value } => self.deliver_ack(node, value)?,
                Effect::Applied { entry, applied } => {
                    let origin = entry.tag.origin;
                    let windex = if origin >= 0 { entry.vts.0[origin as usize] } else { 0 };
                    self.push_trace(TraceKind::Apply {
                        replica: node,
                        var: entry.var,
                        value: entry.value,
                        origin,
                        windex,
                        lamport: entry.tag.lamport,
                        op_index: entry.op_index,
                        vts: entry.vts.0,
                        applied,
                    });
                }
                Effect::Marker { epoch, vts } => self.on_marker(node, epoch, vts),
            }
        }
        Ok(())
    }

    fn deliver_ack(&mut self, node: usize, value: Option<Value>) -> Result<(), SimError> {
        let idx = self.clients[node]
            .on_ack(value, self.time)
            .map_err(|source| SimError::Protocol { time: self.time, source })?;
        self.push_trace(TraceKind::Response { client: node, op_index: idx, value });
        if self.clients[node].can_invoke() {
            let think = self.rng.gen_range(1..=self.cfg.max_latency);
            self.schedule(self.time + think, Action::ClientStep { client: ReplicaId(node) });
        }
        Ok(())
    }

    fn dispatch_delivery(&mut self, d: Delivery) -> Result<(), SimError> {
        let to = d.to.0;
        match d.msg.kind.clone() {
            MessageKind::Write { .. } => {
                let effects = self.replicas[to].on_write_delivery(&d.msg);
                self.apply_effects(to, effects)
            }
            MessageKind::Read { .. } => {
                let effects = self.replicas[to].on_read_delivery(&d.msg);
                self.apply_effects(to, effects)
            }
            MessageKind::Marker { epoch, vts } => {
                self.on_marker(to, epoch, vts);
                Ok(())
            }
            MessageKind::CheckpointDone { epoch, client, incrementals } => {
                self.ckpts.report(epoch, d.msg.sender, client, incrementals, None);
                self.maybe_complete_checkpoint();
                Ok(())
            }
            _ => Ok(()),
        }
    }

    // ---- checkpointing -------------------------------------------------

    fn initiate_checkpoint(&mut self) {
        let initiator = self.cfg.initiator;
        let epoch = match self.ckpts.begin(initiator) {
            Ok(e) => e,
            Err(_) => {
                self.push_trace(TraceKind::CheckpointRejected { initiator: initiator.0 });
                return;
            }
        };
        self.push_trace(TraceKind::CheckpointInitiated { epoch, initiator: initiator.0 });
        match self.cfg.model {
            EngineKind::Linearizable | EngineKind::Sequential => {
                // marker totally ordered w.r.t. the engine's multicasts
                let msg = ProtocolMessage::plain(initiator, MessageKind::Marker { epoch, vts: None });
                let req = self.net.tomcast(initiator, msg);
                self.schedule_send(req);
            }
            EngineKind::CausalPlus => {
                // the initiator's recorded state must be the same cut the
                // marker vector describes, so both are taken atomically here
                let vts = self.replicas[initiator.0].state.vts.clone();
                self.marker_steps_at(initiator.0, epoch, Some(vts.clone()));
                let msg =
                    ProtocolMessage::plain(initiator, MessageKind::Marker { epoch, vts: Some(vts) });
                let reqs = if self.cfg.marker_fifo_bug {
                    self.net.fifocast(initiator, msg)
                } else {
                    self.net.comcast(initiator, msg)
                };
                for req in reqs.into_iter().filter(|r| r.to != initiator) {
                    self.schedule_send(req);
                }
            }
            EngineKind::Eventual => {
                // initiator performs Replica Steps 1-2 atomically at send
                // time, then sends point-to-point markers to all the others
                let vts = self.replicas[initiator.0].state.vts.clone();
                self.replicas[initiator.0].seen_marker_epochs.insert(epoch);
                self.marker_steps_at(initiator.0, epoch, Some(vts.clone()));
                for k in 0..self.cfg.n {
                    if k != initiator.0 {
                        let msg = ProtocolMessage::plain(
                            initiator,
                            MessageKind::Marker { epoch, vts: Some(vts.clone()) },
                        );
                        let req = self.net.send_p2p(initiator, ReplicaId(k), msg);
                        self.schedule_send(req);
                    }
                }
            }
        }
    }

    /// A Marker surfaced at replica j under the model's ordering discipline.
    fn on_marker(&mut self, j: usize, epoch: u64, marker_vts: Option<VectorTimestamp>) {
        let Some(pending) = self.ckpts.pending.as_ref() else {
            return; // checkpoint discarded by a crash; stale marker
        };
        if pending.epoch != epoch {
            return;
        }
        let initiator = pending.initiator;

        if self.cfg.model == EngineKind::Eventual {
            if !self.replicas[j].seen_marker_epochs.insert(epoch) {
                self.push_trace(TraceKind::MarkerDuplicate { replica: j, epoch });
                return;
            }
            // first delivery: forward the initiator's marker to all others
            self.push_trace(TraceKind::MarkerForwarded { replica: j, epoch });
            for k in 0..self.cfg.n {
                if k != j {
                    let msg = ProtocolMessage::plain(
                        ReplicaId(j),
                        MessageKind::Marker { epoch, vts: marker_vts.clone() },
                    );
                    let req = self.net.send_p2p(ReplicaId(j), ReplicaId(k), msg);
                    self.schedule_send(req);
                }
            }
        }

        self.push_trace(TraceKind::MarkerDelivered {
            replica: j,
            epoch,
            initiator: initiator.0,
            marker_vts: marker_vts.as_ref().map(|v| v.0.clone()),
            local_vts: self.replicas[j].state.vts.0.clone(),
        });

        // audit: causal delivery must guarantee V_j[k] >= V_I[k], k != I
        if self.cfg.model == EngineKind::CausalPlus {
            if let Some(mv) = &marker_vts {
                let local = self.replicas[j].state.vts.clone();
                for k in 0..self.cfg.n {
                    if k != initiator.0 && local.0[k] < mv.0[k] {
                        let detail = format!(
                            "marker inequality violated at replica {j}: V_j[{k}]={} < V_I[{k}]={}",
                            local.0[k], mv.0[k]
                        );
                        self.push_trace(TraceKind::AuditViolation { replica: j, detail: detail.clone() });
                        self.audit_violations.push(detail);
                    }
                }
            }
        }

        self.marker_steps_at(j, epoch, marker_vts);
    }

    /// Replica Steps 1-2 at replica j, atomically within this event: record
    /// state (initiator) or the incremental gap (causal+/eventual non-
    /// initiator), then marker the local client and collect its snapshot.
    fn marker_steps_at(&mut self, j: usize, epoch: u64, marker_vts: Option<VectorTimestamp>) {
        let Some(pending) = self.ckpts.pending.as_ref() else { return };
        let initiator = pending.initiator;
        let is_initiator = j == initiator.0;

        let incrementals: Vec<WriteEntry> = if self.cfg.model.uses_tags() && !is_initiator {
            // own writes with per-sender index in (V_I[j], V_j[j]]: issued
            // and self-applied but not yet reflected at the initiator.
            // In-flight own writes are re-issued after rollback instead.
            let threshold = marker_vts.as_ref().expect("tagged marker carries V_I").0[j] as usize;
            let upper = self.replicas[j].state.vts.0[j] as usize;
            // an inverted window can only happen when the marker outran its
            // ordering discipline; the audit has flagged it already
            self.replicas[j].own_writes[threshold.min(upper)..upper].to_vec()
        } else {
            Vec::new()
        };

        let initiator_state = is_initiator.then(|| self.replicas[j].state.clone());

        // Replica Step 2: marker the local client over its FIFO channel;
        // the client records and MarkerAcks within the same atomic step.
        let snap = self.clients[j].on_marker();
        self.push_trace(TraceKind::ClientRecorded { client: j, pc: snap.pc, checksum: snap.checksum });

        if is_initiator {
            self.ckpts.report(epoch, ReplicaId(j), snap, incrementals, initiator_state);
            self.maybe_complete_checkpoint();
        } else {
            let msg = ProtocolMessage::plain(
                ReplicaId(j),
                MessageKind::CheckpointDone { epoch, client: snap, incrementals },
            );
            let req = self.net.send_p2p(ReplicaId(j), initiator, msg);
            self.schedule_send(req);
        }
    }

    fn maybe_complete_checkpoint(&mut self) {
        if let Some(record) = self.ckpts.try_complete() {
            let cost = cost_report(record);
            self.push_trace(TraceKind::CheckpointComplete {
                epoch: cost.epoch,
                full_states: cost.full_replica_states_recorded,
                incremental_updates: cost.incremental_update_count,
                bytes: cost.bytes_estimate,
            });
        }
    }

    // ---- rollback ------------------------------------------------------

    /// Whole-system rollback to the most recent complete checkpoint (or the
    /// initial state): clear the network, restore every replica to the
    /// initiator's recorded state, replay the incremental lists through the
    /// convergence rule, restore the clients and resume execution.
    pub fn rollback(&mut self) {
        let record = self.ckpts.latest();
        self.net.clear();
        self.restore_from(&record);

        let restored_vars = self.replicas[0]
            .state
            .vars
            .iter()
            .map(|(k, v)| {
                (
                    k.clone(),
                    RestoredVar {
                        value: v.value,
                        origin: v.tag.origin,
                        windex: if v.tag.origin >= 0 { v.vts.0[v.tag.origin as usize] } else { 0 },
                        lamport: v.tag.lamport,
                    },
                )
            })
            .collect();
        self.push_trace(TraceKind::Rollback {
            epoch: record.epoch,
            baseline: record.baseline().0,
            client_pcs: record.clients.iter().map(|c| c.pc).collect(),
            restored_vars,
        });

        // clients resume; incomplete operations are re-invoked
        self.schedule_client_steps();
    }

    fn restore_from(&mut self, record: &crate::checkpoint::CheckpointRecord) {
        let baseline = record.baseline();
        // each replica independently applies the recorded incremental lists
        // in the fixed origin-major order; convergence makes them identical
        let replay = record.replay_entries();
        for r in &mut self.replicas {
            r.state = record.initiator_state.clone();
            for w in &replay {
                crate::engine::apply_if_newer(&mut r.state, &w.var, w.value, &w.vts, w.tag);
            }
            r.own_writes.truncate(baseline.get(r.id) as usize);
            r.pending = None;
        }
        self.net.reset_causal_counts(&baseline);
        for (i, c) in self.clients.iter_mut().enumerate() {
            c.restore(&record.clients[i]);
        }
    }

    /// Number of queue events processed so far (the trigger clock).
    pub fn events_processed(&self) -> u64 {
        self.event_count
    }

    /// All replica variable copies, for convergence checking.
    pub fn final_states(&self) -> Vec<ReplicaState> {
        self.replicas.iter().map(|r| r.state.clone()).collect()
    }

    /// The effective history: per-client completed operations surviving
    /// rollback truncation, in completion order.
    pub fn history(&self) -> Vec<OperationRecord> {
        let mut records: Vec<OperationRecord> =
            self.clients.iter().flat_map(|c| c.records.iter().cloned()).collect();
        records.sort_by_key(|r| (r.invoke_time, r.client.0, r.op.op_index));
        records
    }
}
