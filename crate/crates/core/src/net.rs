//! Deterministic network layer: FIFO point-to-point channels plus three
//! multicast primitives — totally-ordered (+FIFO), causally-ordered and
//! FIFO-ordered.
//!
//! Total order is implemented with a fixed sequencer: replica 0 assigns
//! global sequence numbers, every replica delivers in sequence-number order
//! from a holdback queue. Causal order uses a vector-clock holdback: a write
//! from `j` is deliverable when the destination has seen exactly the writes
//! the sender had seen when it issued it.

use crate::types::{MessageKind, ProtocolMessage, ReplicaId, SimTime, VectorTimestamp};
use std::collections::{BTreeMap, VecDeque};

/// Wire-level envelope routed over the FIFO channels.
#[derive(Clone, Debug)]
pub enum NetPayload {
    /// A totally-ordered multicast on its way to the sequencer.
    SeqRequest(ProtocolMessage),
    /// A sequenced multicast on its way from the sequencer to a replica.
    TotalOrder { seqno: u64, msg: ProtocolMessage },
    Causal(ProtocolMessage),
    Fifo(ProtocolMessage),
    Direct(ProtocolMessage),
}

/// Ordering discipline a delivered message arrived under.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeliveryKind {
    Total,
    Causal,
    Fifo,
    Direct,
}

/// A message surfaced to the replica layer.
#[derive(Clone, Debug)]
pub struct Delivery {
    pub to: ReplicaId,
    pub kind: DeliveryKind,
    pub seqno: Option<u64>,
    pub msg: ProtocolMessage,
}

/// A send the network wants performed (the simulator assigns latency).
#[derive(Clone, Debug)]
pub struct SendRequest {
    pub from: ReplicaId,
    pub to: ReplicaId,
    pub payload: NetPayload,
}

#[derive(Debug, Default)]
struct Channel {
    queue: VecDeque<NetPayload>,
    /// Earliest time the next delivery on this channel may fire; enforces
    /// per-pair FIFO under randomized latencies.
    next_free: SimTime,
}

/// Full network state for one simulation: channels, sequencer and holdback
/// queues. Single-threaded by contract.
#[derive(Debug)]
pub struct Network {
    n: usize,
    channels: Vec<Channel>,
    /// Next global sequence number the sequencer will assign.
    sequencer_next: u64,
    /// Per-replica next expected global sequence number.
    to_next_expected: Vec<u64>,
    to_holdback: Vec<BTreeMap<u64, ProtocolMessage>>,
    /// Per destination, per sender: causally-ordered messages awaiting their
    /// delivery condition.
    causal_queues: Vec<Vec<VecDeque<ProtocolMessage>>>,
    /// Per destination: count of causal Writes delivered, per origin.
    causal_counts: Vec<VectorTimestamp>,
    /// Bumped by `clear`; in-flight delivery events from an older generation
    /// are dead.
    pub generation: u64,
}

impl Network {
    pub const SEQUENCER: ReplicaId = ReplicaId(0);

    pub fn new(n: usize) -> Self {
        Network {
            n,
            channels: (0..n * n).map(|_| Channel::default()).collect(),
            sequencer_next: 0,
            to_next_expected: vec![0; n],
            to_holdback: (0..n).map(|_| BTreeMap::new()).collect(),
            causal_queues: (0..n).map(|_| (0..n).map(|_| VecDeque::new()).collect()).collect(),
            causal_counts: (0..n).map(|_| VectorTimestamp::zero(n)).collect(),
            generation: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn ch(&mut self, from: ReplicaId, to: ReplicaId) -> &mut Channel {
        &mut self.channels[from.0 * self.n + to.0]
    }

    /// Enqueue a payload on channel (from, to). Returns the fire time for the
    /// matching delivery event: the proposed time, pushed forward if needed
    /// so deliveries on one channel stay in send order.
    pub fn enqueue(&mut self, from: ReplicaId, to: ReplicaId, payload: NetPayload, proposed: SimTime) -> SimTime {
        let ch = self.ch(from, to);
        let t = proposed.max(ch.next_free);
        ch.next_free = t;
        ch.queue.push_back(payload);
        t
    }

    /// Totally-ordered multicast: route the message to the sequencer.
    pub fn tomcast(&self, sender: ReplicaId, msg: ProtocolMessage) -> SendRequest {
        SendRequest { from: sender, to: Self::SEQUENCER, payload: NetPayload::SeqRequest(msg) }
    }

    /// Causally-ordered multicast: one copy per replica, self included.
    pub fn comcast(&self, sender: ReplicaId, msg: ProtocolMessage) -> Vec<SendRequest> {
        (0..self.n)
            .map(|d| SendRequest { from: sender, to: ReplicaId(d), payload: NetPayload::Causal(msg.clone()) })
            .collect()
    }

    /// FIFO-ordered multicast: one copy per replica, self included.
    pub fn fifocast(&self, sender: ReplicaId, msg: ProtocolMessage) -> Vec<SendRequest> {
        (0..self.n)
            .map(|d| SendRequest { from: sender, to: ReplicaId(d), payload: NetPayload::Fifo(msg.clone()) })
            .collect()
    }

    pub fn send_p2p(&self, from: ReplicaId, to: ReplicaId, msg: ProtocolMessage) -> SendRequest {
        SendRequest { from, to, payload: NetPayload::Direct(msg) }
    }

    /// Pop the head of channel (from, to) and route it. Returns messages now
    /// deliverable to the replica layer plus follow-on sends (sequencer
    /// fan-out). A `None` head means the channel was cleared under an
    /// in-flight event; nothing happens.
    pub fn arrive(&mut self, from: ReplicaId, to: ReplicaId) -> (Vec<Delivery>, Vec<SendRequest>) {
        let Some(payload) = self.ch(from, to).queue.pop_front() else {
            return (Vec::new(), Vec::new());
        };
        match payload {
            NetPayload::SeqRequest(msg) => {
                debug_assert_eq!(to, Self::SEQUENCER);
                let seqno = self.sequencer_next;
                self.sequencer_next += 1;
                let sends = (0..self.n)
                    .map(|d| SendRequest {
                        from: to,
                        to: ReplicaId(d),
                        payload: NetPayload::TotalOrder { seqno, msg: msg.clone() },
                    })
                    .collect();
                (Vec::new(), sends)
            }
            NetPayload::TotalOrder { seqno, msg } => {
                self.to_holdback[to.0].insert(seqno, msg);
                (self.drain_total(to), Vec::new())
            }
            NetPayload::Causal(msg) => {
                self.causal_queues[to.0][msg.sender.0].push_back(msg);
                (self.drain_causal(to), Vec::new())
            }
            NetPayload::Fifo(msg) => {
                (vec![Delivery { to, kind: DeliveryKind::Fifo, seqno: None, msg }], Vec::new())
            }
            NetPayload::Direct(msg) => {
                (vec![Delivery { to, kind: DeliveryKind::Direct, seqno: None, msg }], Vec::new())
            }
        }
    }

    fn drain_total(&mut self, to: ReplicaId) -> Vec<Delivery> {
        let mut out = Vec::new();
        loop {
            let next = self.to_next_expected[to.0];
            match self.to_holdback[to.0].remove(&next) {
                Some(msg) => {
                    self.to_next_expected[to.0] += 1;
                    out.push(Delivery { to, kind: DeliveryKind::Total, seqno: Some(next), msg });
                }
                None => break,
            }
        }
        out
    }

    fn drain_causal(&mut self, to: ReplicaId) -> Vec<Delivery> {
        let mut out = Vec::new();
        loop {
            let mut progress = false;
            for s in 0..self.n {
                while let Some(head) = self.causal_queues[to.0][s].front() {
                    if !self.causal_deliverable(to, head) {
                        break;
                    }
                    let msg = self.causal_queues[to.0][s].pop_front().unwrap();
                    if let MessageKind::Write { .. } = msg.kind {
                        let idx = msg
                            .piggyback
                            .as_ref()
                            .expect("causal write without piggyback")
                            .vts
                            .get(msg.sender);
                        self.causal_counts[to.0].set(msg.sender, idx);
                    }
                    out.push(Delivery { to, kind: DeliveryKind::Causal, seqno: None, msg });
                    progress = true;
                }
            }
            if !progress {
                break;
            }
        }
        out
    }

    /// Writes carry the sender's vector counting the new write itself:
    /// deliverable when the destination has seen the sender's previous write
    /// and everything else the sender had seen. Markers carry the initiator's
    /// vector without counting themselves: deliverable when the destination
    /// has caught up to it.
    fn causal_deliverable(&self, to: ReplicaId, msg: &ProtocolMessage) -> bool {
        let local = &self.causal_counts[to.0];
        match &msg.kind {
            MessageKind::Write { .. } => {
                let m = &msg.piggyback.as_ref().expect("causal write without piggyback").vts;
                let s = msg.sender;
                if m.get(s) != local.get(s) + 1 {
                    return false;
                }
                (0..self.n).all(|k| k == s.0 || m.0[k] <= local.0[k])
            }
            MessageKind::Marker { vts: Some(v), .. } => v.leq(local),
            _ => true,
        }
    }

    /// Empty every channel, holdback queue and the sequencer pending set.
    /// Post-rollback deliveries can only result from re-execution. Replicas
    /// skip forward to the next fresh sequence number, since every in-flight
    /// sequenced message is destroyed everywhere.
    pub fn clear(&mut self) {
        for ch in &mut self.channels {
            ch.queue.clear();
        }
        for hb in &mut self.to_holdback {
            hb.clear();
        }
        for qs in &mut self.causal_queues {
            for q in qs {
                q.clear();
            }
        }
        for e in &mut self.to_next_expected {
            *e = self.sequencer_next;
        }
        self.generation += 1;
    }

    /// Reset the causal delivery counts after rollback so that re-executed
    /// multicasts are judged against the restored replica vectors.
    pub fn reset_causal_counts(&mut self, counts: &VectorTimestamp) {
        for c in &mut self.causal_counts {
            *c = counts.clone();
        }
    }
}
