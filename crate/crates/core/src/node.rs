//! Per-node link-layer state machine shared by all four protocols.
//!
//! A node owns three queues (intended natives, adopted overheard natives, pre-mixed coded
//! groups), a decode pool, a bounded cache of overheard ACKs, retransmission records and
//! helper hold timers. Event handlers mutate the state and return [`Action`]s that the
//! simulation engine carries out.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::time::Duration;

use bytes::Bytes;

use crate::coding::{
    bend_mixable, cope_select_upto, flexonc_eligible, helper_hold_time, priority_index, sender_timeout,
    NeighborKnowledge, Protocol, TimerParams,
};
use crate::model::{
    decodable, decode_with, encode, Ack, CodedPacket, Frame, FrameBody, NativePacket, NodeId, PayloadId,
    RECEPTION_REPORT_LEN,
};
use crate::phy::Topology;
use crate::routing::ForwardingTables;

#[derive(Clone, Debug, PartialEq)]
pub struct NodeParams {
    pub queue_cap: usize,
    pub ack_cache_cap: usize,
    pub pool_cap: usize,
    /// Outlives the worst queueing delay (64 entries x 5 attempts), so a partner's payload
    /// stays decodable until every copy of it has left the neighborhood.
    pub pool_lifetime: Duration,
    pub retry_limit: u32,
    /// Longest a forwarded native waits for a coding partner before going out alone.
    pub coding_hold: Duration,
    /// Lets a retry be mixed with a fresh partner instead of always going out native.
    pub remix_retransmissions: bool,
    pub timers: TimerParams,
}

impl Default for NodeParams {
    fn default() -> Self {
        Self {
            queue_cap: 64,
            ack_cache_cap: 64,
            pool_cap: 256,
            pool_lifetime: Duration::from_secs(5),
            retry_limit: 4,
            coding_hold: Duration::from_millis(20),
            remix_retransmissions: true,
            timers: TimerParams::default(),
        }
    }
}

/// Read-only context every handler needs.
#[derive(Clone, Copy)]
pub struct NodeEnv<'a> {
    pub topo: &'a Topology,
    pub tables: &'a ForwardingTables,
    pub protocol: Protocol,
    pub params: &'a NodeParams,
    pub data_rate_bps: u64,
}

impl NodeEnv<'_> {
    pub fn airtime(&self, bits: u64) -> Duration {
        Duration::from_nanos(bits * 1_000_000_000 / self.data_rate_bps)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeTimer {
    Retransmit(PayloadId),
    Helper(PayloadId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    /// Immediate ACK for a just-received data frame; `slot` is the position in the ACK train.
    Ack {
        payload: PayloadId,
        slot: usize,
    },
    /// ACK sent by a helper once its hold expires, as soon as the medium allows.
    HelperAck {
        payload: PayloadId,
    },
    Deliver {
        id: PayloadId,
        payload: Bytes,
    },
    SetTimer {
        timer: NodeTimer,
        at: Duration,
    },
    /// Queue contents changed; the MAC should re-evaluate whether to contend.
    Wake,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueueEntry {
    pub pkt: NativePacket,
    /// Transmissions so far.
    pub attempts: u32,
    pub enqueued_at: Duration,
    /// Received from another node rather than generated here.
    pub transit: bool,
    /// Last attempt went out inside a coded frame.
    pub last_coded: bool,
}

#[derive(Clone, Debug)]
struct Pending {
    entry: QueueEntry,
    deadline: Duration,
}

#[derive(Clone, Debug)]
struct HelperRecord {
    /// Packet as it will be forwarded: next hop already points past the intended forwarder.
    pkt: NativePacket,
    sender: NodeId,
    intended: NodeId,
    index: usize,
    fire_at: Duration,
}

#[derive(Clone, Debug)]
struct PoolEntry {
    payload: Bytes,
    at: Duration,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NodeCounters {
    pub tx_data: u64,
    pub tx_coded: u64,
    pub retransmissions: u64,
    pub duplicates_suppressed: u64,
    pub helper_forwards: u64,
    pub helper_cancelled: u64,
    pub queue_drops: u64,
    pub retry_drops: u64,
    pub undecodable: u64,
    pub malformed: u64,
    pub app_duplicates_blocked: u64,
    pub reports_sent: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Source {
    Mixing,
    Q1,
    Q2,
}

const ROTATION: [Source; 3] = [Source::Mixing, Source::Q1, Source::Q2];

#[derive(Clone, Debug, PartialEq, Eq)]
enum Choice {
    Mixed,
    Natives {
        head: Source,
        partners: Vec<(Source, usize)>,
    },
    Report,
}

/// What the node would send if granted the medium now.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Plan {
    Idle,
    /// Nothing sendable until this time (a coding hold expires).
    WaitUntil(Duration),
    Ready,
}

pub struct NodeState {
    pub id: NodeId,
    pub protocol: Protocol,
    q1: VecDeque<QueueEntry>,
    q2: VecDeque<QueueEntry>,
    mixing_q: VecDeque<Vec<QueueEntry>>,
    pool: HashMap<PayloadId, PoolEntry>,
    ack_cache: VecDeque<(NodeId, PayloadId)>,
    pending: BTreeMap<PayloadId, Pending>,
    helper_timers: BTreeMap<PayloadId, HelperRecord>,
    delivered: HashSet<PayloadId>,
    /// Payloads this node already took responsibility for.
    handled: HashSet<PayloadId>,
    /// Handled payloads whose custody passed to another node on the strength of its ACK.
    superseded: HashSet<PayloadId>,
    pub knowledge: NeighborKnowledge,
    recent: VecDeque<PayloadId>,
    report_pending: bool,
    rr: usize,
    last_expiry: Duration,
    pub counters: NodeCounters,
}

impl NodeState {
    pub fn new(id: NodeId, protocol: Protocol) -> Self {
        Self {
            id,
            protocol,
            q1: VecDeque::new(),
            q2: VecDeque::new(),
            mixing_q: VecDeque::new(),
            pool: HashMap::new(),
            ack_cache: VecDeque::new(),
            pending: BTreeMap::new(),
            helper_timers: BTreeMap::new(),
            delivered: HashSet::new(),
            handled: HashSet::new(),
            superseded: HashSet::new(),
            knowledge: NeighborKnowledge::new(),
            recent: VecDeque::new(),
            report_pending: false,
            rr: 0,
            last_expiry: Duration::ZERO,
            counters: NodeCounters::default(),
        }
    }

    // ---- inspection -------------------------------------------------------------------

    pub fn q1(&self) -> impl Iterator<Item = &NativePacket> {
        self.q1.iter().map(|e| &e.pkt)
    }

    pub fn q2(&self) -> impl Iterator<Item = &NativePacket> {
        self.q2.iter().map(|e| &e.pkt)
    }

    pub fn mixing_len(&self) -> usize {
        self.mixing_q.len()
    }

    pub fn pool_len(&self) -> usize {
        self.pool.len()
    }

    pub fn ack_cache_len(&self) -> usize {
        self.ack_cache.len()
    }

    pub fn pool_contains(&self, id: &PayloadId) -> bool {
        self.pool.contains_key(id)
    }

    pub fn is_pending(&self, id: &PayloadId) -> bool {
        self.pending.contains_key(id)
    }

    pub fn pending_ids(&self) -> impl Iterator<Item = PayloadId> + '_ {
        self.pending.keys().copied()
    }

    pub fn helper_timer(&self, id: &PayloadId) -> Option<(Duration, usize)> {
        self.helper_timers.get(id).map(|r| (r.fire_at, r.index))
    }

    pub fn has_delivered(&self, id: &PayloadId) -> bool {
        self.delivered.contains(id)
    }

    /// A deferred helper ACK is stale once another node's ACK has taken the packet off this node.
    pub fn helper_ack_valid(&self, id: &PayloadId) -> bool {
        !self.superseded.contains(id)
    }

    /// Invariant: no payload is both awaiting an ACK and held by a helper timer.
    pub fn pending_and_helper_disjoint(&self) -> bool {
        self.pending.keys().all(|id| !self.helper_timers.contains_key(id))
    }

    /// Packets still queued or awaiting an ACK.
    pub fn backlog(&self) -> usize {
        self.q1.len() + self.q2.len() + self.mixing_q.iter().map(Vec::len).sum::<usize>() + self.pending.len()
    }

    pub fn has_backlog(&self) -> bool {
        !self.q1.is_empty() || !self.q2.is_empty() || !self.mixing_q.is_empty()
    }

    /// IDs piggybacked on this node's frames.
    pub fn reception_report(&self) -> Vec<PayloadId> {
        self.recent.iter().copied().collect()
    }

    // ---- traffic ----------------------------------------------------------------------

    /// Queues a locally generated datagram. Returns false if the queue was full.
    pub fn originate(
        &mut self,
        env: &NodeEnv,
        id: PayloadId,
        dst: NodeId,
        payload: Bytes,
        now: Duration,
    ) -> bool {
        let Ok(next_hop) = env.tables.next_hop(self.id, dst) else {
            self.counters.malformed += 1;
            return false;
        };
        let pkt = NativePacket {
            id,
            src: self.id,
            dst,
            prev_hop: self.id,
            next_hop,
            second_next_hop: None,
            payload,
        };
        self.handled.insert(id);
        self.pool_insert(env, id, pkt.payload.clone(), now);
        self.note_recent(id);
        let entry = QueueEntry {
            pkt,
            attempts: 0,
            last_coded: false,
            enqueued_at: now,
            transit: false,
        };
        if self.q1.len() >= env.params.queue_cap {
            self.counters.queue_drops += 1;
            return false;
        }
        self.q1.push_back(entry);
        true
    }

    // ---- reception --------------------------------------------------------------------

    pub fn on_data_frame(&mut self, env: &NodeEnv, frame: &Frame, now: Duration) -> Vec<Action> {
        self.expire(env, now);
        self.learn(frame, now);
        let mut out = Vec::new();
        match &frame.body {
            FrameBody::Native(p) => {
                if p.prev_hop != frame.sender || p.next_hop == p.prev_hop {
                    self.counters.malformed += 1;
                    return out;
                }
                if p.next_hop == self.id {
                    self.accept_intended(env, p.clone(), 0, now, &mut out);
                } else {
                    self.overhear_native(env, p, frame.sender, now, &mut out);
                }
            }
            FrameBody::Coded(c) => {
                if !well_formed(c, frame.sender) {
                    self.counters.malformed += 1;
                    return out;
                }
                let mine: Vec<usize> = c.intended_for(self.id).map(|(k, _)| k).collect();
                if !mine.is_empty() {
                    for k in mine {
                        let target = c.components[k];
                        match decode_with(c, |id| self.pool.get(id).map(|e| e.payload.clone()), &target) {
                            Ok(native) => self.accept_intended(env, native, k, now, &mut out),
                            // The sender finds out through its ACK timeout.
                            Err(_) => self.counters.undecodable += 1,
                        }
                    }
                } else if self.protocol == Protocol::FlexOnc {
                    self.overhear_coded(env, c, now, &mut out);
                }
            }
            FrameBody::Ack(_) | FrameBody::Report => {}
        }
        out
    }

    /// Intended forwarder (or destination) got `pkt`: ACK it, then deliver or queue it.
    fn accept_intended(
        &mut self,
        env: &NodeEnv,
        pkt: NativePacket,
        slot: usize,
        now: Duration,
        out: &mut Vec<Action>,
    ) {
        let ack = Action::Ack {
            payload: pkt.id,
            slot,
        };
        self.pool_insert(env, pkt.id, pkt.payload.clone(), now);
        self.note_recent(pkt.id);
        if self.helper_timers.remove(&pkt.id).is_some() {
            self.counters.helper_cancelled += 1;
        }
        if pkt.dst == self.id {
            out.push(ack);
            if self.delivered.insert(pkt.id) {
                out.push(Action::Deliver {
                    id: pkt.id,
                    payload: pkt.payload,
                });
            } else {
                self.counters.app_duplicates_blocked += 1;
                self.counters.duplicates_suppressed += 1;
            }
            return;
        }
        let Ok(next_hop) = env.tables.next_hop(self.id, pkt.dst) else {
            self.counters.malformed += 1;
            return;
        };
        let pkt = NativePacket {
            next_hop,
            second_next_hop: None,
            ..pkt
        };
        if self.handled.contains(&pkt.id) || !self.admit_packet(env, &pkt) {
            self.counters.duplicates_suppressed += 1;
            // Once another node's ACK took the packet off our hands, a repeated ACK from us
            // would read as progress and make that node drop the surviving copy.
            if self.handled.contains(&pkt.id) {
                if !self.superseded.contains(&pkt.id) {
                    out.push(ack);
                }
            } else {
                self.handled.insert(pkt.id);
                self.superseded.insert(pkt.id);
            }
            return;
        }
        out.push(ack);
        self.handled.insert(pkt.id);
        let entry = QueueEntry {
            pkt,
            attempts: 0,
            last_coded: false,
            enqueued_at: now,
            transit: true,
        };
        if self.q1.len() >= env.params.queue_cap {
            self.counters.queue_drops += 1;
            return;
        }
        self.q1.push_back(entry);
        out.push(Action::Wake);
    }

    fn overhear_native(
        &mut self,
        env: &NodeEnv,
        p: &NativePacket,
        sender: NodeId,
        now: Duration,
        out: &mut Vec<Action>,
    ) {
        if !self.protocol.codes() {
            return;
        }
        self.pool_insert(env, p.id, p.payload.clone(), now);
        self.note_recent(p.id);
        if self.protocol == Protocol::Cope && !self.has_backlog() && !self.report_pending {
            self.report_pending = true;
            out.push(Action::Wake);
        }
        if !self.protocol.helps_natives()
            || p.dst == self.id
            || self.handled.contains(&p.id)
            || self.helper_timers.contains_key(&p.id)
            || !env.topo.is_neighbor(self.id, p.next_hop)
        {
            return;
        }
        let onward = match self.protocol {
            Protocol::Bend => match p.second_next_hop {
                Some(h) => h,
                None => return,
            },
            _ => {
                if p.next_hop == p.dst {
                    p.dst
                } else {
                    match env.tables.neighbor_next_hop(self.id, p.next_hop, p.dst) {
                        Ok(h) => h,
                        Err(_) => return,
                    }
                }
            }
        };
        if onward == self.id || !env.topo.is_neighbor(self.id, onward) {
            return;
        }
        let forward = NativePacket {
            prev_hop: sender,
            next_hop: onward,
            second_next_hop: None,
            ..p.clone()
        };
        if !self.admit_packet(env, &forward) {
            return;
        }
        self.arm_helper(env, forward, sender, p.next_hop, now, out);
    }

    fn overhear_coded(&mut self, env: &NodeEnv, c: &CodedPacket, now: Duration, out: &mut Vec<Action>) {
        let eligible = flexonc_eligible(self.id, c, env.tables, env.topo, |id| self.pool.contains_key(id));
        // Opportunistically peel whatever is decodable into the pool.
        for target in &c.components {
            if self.pool.contains_key(&target.id) {
                continue;
            }
            if decodable(c, |id| self.pool.contains_key(id), target) {
                if let Ok(native) = decode_with(c, |id| self.pool.get(id).map(|e| e.payload.clone()), target)
                {
                    self.pool_insert(env, native.id, native.payload, now);
                    self.note_recent(native.id);
                }
            }
        }
        let Some(comp) = eligible else { return };
        if self.handled.contains(&comp.id) || self.helper_timers.contains_key(&comp.id) {
            return;
        }
        let Some(payload) = self.pool.get(&comp.id).map(|e| e.payload.clone()) else {
            return;
        };
        let onward = if comp.intended_next_hop == comp.dst {
            comp.dst
        } else {
            match env
                .tables
                .neighbor_next_hop(self.id, comp.intended_next_hop, comp.dst)
            {
                Ok(h) => h,
                Err(_) => return,
            }
        };
        let forward = NativePacket {
            id: comp.id,
            src: comp.src,
            dst: comp.dst,
            prev_hop: c.sender,
            next_hop: onward,
            second_next_hop: None,
            payload,
        };
        if onward == self.id || !self.admit_packet(env, &forward) {
            return;
        }
        self.arm_helper(env, forward, c.sender, comp.intended_next_hop, now, out);
    }

    fn arm_helper(
        &mut self,
        env: &NodeEnv,
        pkt: NativePacket,
        sender: NodeId,
        intended: NodeId,
        now: Duration,
        out: &mut Vec<Action>,
    ) {
        let Ok(index) = priority_index(self.id, sender, intended, env.topo) else {
            return;
        };
        let fire_at = now + helper_hold_time(index, &env.params.timers);
        let id = pkt.id;
        self.helper_timers.insert(
            id,
            HelperRecord {
                pkt,
                sender,
                intended,
                index,
                fire_at,
            },
        );
        out.push(Action::SetTimer {
            timer: NodeTimer::Helper(id),
            at: fire_at,
        });
    }

    /// Duplicate check against overheard ACKs and already-delivered payloads.
    ///
    /// `pkt.next_hop` is the hop this node would forward to, so an ACK from the upstream
    /// node that handed the packet over does not count as downstream progress.
    pub fn admit_packet(&self, env: &NodeEnv, pkt: &NativePacket) -> bool {
        if self.delivered.contains(&pkt.id) {
            return false;
        }
        !self
            .ack_cache
            .iter()
            .any(|&(s, id)| id == pkt.id && covers(env.topo, s, pkt.next_hop))
    }

    pub fn on_ack(&mut self, env: &NodeEnv, frame: &Frame, ack: Ack, now: Duration) -> Vec<Action> {
        self.expire(env, now);
        self.learn(frame, now);
        let mut out = Vec::new();
        let s = ack.ack_sender;
        let id = ack.payload;
        if s == self.id {
            return out;
        }
        if let Some(p) = self.pending.get(&id) {
            let next = p.entry.pkt.next_hop;
            if covers(env.topo, s, next) {
                self.pending.remove(&id);
                if s != next {
                    self.superseded.insert(id);
                }
            }
        }
        let mut changed = false;
        for q in [&mut self.q1, &mut self.q2] {
            let before = q.len();
            q.retain(|e| !(e.pkt.id == id && covers(env.topo, s, e.pkt.next_hop)));
            let dropped = (before - q.len()) as u64;
            self.counters.duplicates_suppressed += dropped;
            changed |= dropped > 0;
        }
        let mut singles = Vec::new();
        self.mixing_q.retain_mut(|group| {
            let before = group.len();
            group.retain(|e| !(e.pkt.id == id && covers(env.topo, s, e.pkt.next_hop)));
            if group.len() < before {
                changed = true;
            }
            if group.len() == 1 {
                singles.push(group.pop().unwrap());
            }
            group.len() >= 2
        });
        self.counters.duplicates_suppressed += singles.len() as u64;
        if changed {
            self.superseded.insert(id);
        }
        for e in singles.into_iter().rev() {
            self.q1.push_front(e);
        }
        if let Some(rec) = self.helper_timers.get(&id) {
            let outranked = matches!(
                priority_index(s, rec.sender, rec.intended, env.topo),
                Ok(i) if i < rec.index
            );
            if outranked || covers(env.topo, s, rec.pkt.next_hop) {
                self.helper_timers.remove(&id);
                self.counters.helper_cancelled += 1;
            }
        }
        self.ack_cache.push_back((s, id));
        while self.ack_cache.len() > env.params.ack_cache_cap {
            self.ack_cache.pop_front();
        }
        if self.protocol == Protocol::Cope {
            self.knowledge.record(s, id, now);
        }
        if changed {
            out.push(Action::Wake);
        }
        out
    }

    pub fn on_report(&mut self, env: &NodeEnv, frame: &Frame, now: Duration) {
        self.expire(env, now);
        self.learn(frame, now);
    }

    // ---- timers -----------------------------------------------------------------------

    pub fn on_timer(&mut self, env: &NodeEnv, timer: NodeTimer, now: Duration) -> Vec<Action> {
        self.expire(env, now);
        let mut out = Vec::new();
        match timer {
            NodeTimer::Retransmit(id) => {
                let due = self.pending.get(&id).is_some_and(|p| p.deadline == now);
                if !due {
                    return out;
                }
                let p = self.pending.remove(&id).unwrap();
                if p.entry.attempts <= env.params.retry_limit {
                    self.q1.push_front(p.entry);
                    if self.q1.len() > env.params.queue_cap {
                        self.q1.pop_back();
                        self.counters.queue_drops += 1;
                    }
                    out.push(Action::Wake);
                } else {
                    self.counters.retry_drops += 1;
                }
            }
            NodeTimer::Helper(id) => {
                let due = self.helper_timers.get(&id).is_some_and(|r| r.fire_at == now);
                if !due {
                    return out;
                }
                let rec = self.helper_timers.remove(&id).unwrap();
                if self.handled.contains(&id) {
                    return out;
                }
                if self.q2.len() >= env.params.queue_cap {
                    self.counters.queue_drops += 1;
                    return out;
                }
                self.handled.insert(id);
                self.counters.helper_forwards += 1;
                out.push(Action::HelperAck { payload: id });
                self.pool_insert(env, id, rec.pkt.payload.clone(), now);
                let entry = QueueEntry {
                    pkt: rec.pkt,
                    attempts: 0,
                    last_coded: false,
                    enqueued_at: now,
                    transit: true,
                };
                self.adopt(env, entry);
                out.push(Action::Wake);
            }
        }
        out
    }

    /// Queues a packet forwarded on another node's behalf, pairing it with a queue head
    /// when the pair is mixable.
    fn adopt(&mut self, env: &NodeEnv, entry: QueueEntry) {
        if self.protocol.codes() && self.mixing_q.len() < env.params.queue_cap {
            let mixable = |h: &QueueEntry| {
                h.pkt.id != entry.pkt.id
                    && h.pkt.next_hop != entry.pkt.next_hop
                    && bend_mixable(&entry.pkt, &h.pkt, env.topo)
            };
            let partner = if self.q1.front().is_some_and(mixable) {
                self.q1.pop_front()
            } else if self.q2.front().is_some_and(mixable) {
                self.q2.pop_front()
            } else {
                None
            };
            if let Some(h) = partner {
                self.mixing_q.push_back(vec![entry, h]);
                return;
            }
        }
        self.q2.push_back(entry);
    }

    // ---- transmission -----------------------------------------------------------------

    pub fn plan(&self, env: &NodeEnv, now: Duration) -> Plan {
        match self.choose(env, now) {
            Ok(_) => Plan::Ready,
            Err(Some(t)) => Plan::WaitUntil(t),
            Err(None) => Plan::Idle,
        }
    }

    fn choose(&self, env: &NodeEnv, now: Duration) -> Result<(usize, Choice), Option<Duration>> {
        let mut wait: Option<Duration> = None;
        for k in 0..ROTATION.len() {
            let slot = (self.rr + k) % ROTATION.len();
            match ROTATION[slot] {
                Source::Mixing => {
                    if !self.mixing_q.is_empty() {
                        return Ok((slot, Choice::Mixed));
                    }
                }
                src @ (Source::Q1 | Source::Q2) => {
                    let Some(head) = self.queue(src).front() else {
                        continue;
                    };
                    let partners = self.find_partners(env, src, head, now);
                    if partners.is_empty() && self.holding(env, head) {
                        let until = head.enqueued_at + env.params.coding_hold;
                        if now < until {
                            wait = Some(wait.map_or(until, |w| w.min(until)));
                            continue;
                        }
                    }
                    return Ok((slot, Choice::Natives { head: src, partners }));
                }
            }
        }
        if self.report_pending {
            return Ok((self.rr, Choice::Report));
        }
        Err(wait)
    }

    fn holding(&self, env: &NodeEnv, e: &QueueEntry) -> bool {
        self.protocol.codes() && e.transit && e.attempts == 0 && !env.params.coding_hold.is_zero()
    }

    fn queue(&self, src: Source) -> &VecDeque<QueueEntry> {
        match src {
            Source::Q1 => &self.q1,
            Source::Q2 => &self.q2,
            Source::Mixing => unreachable!("mixing queue holds groups"),
        }
    }

    fn queue_mut(&mut self, src: Source) -> &mut VecDeque<QueueEntry> {
        match src {
            Source::Q1 => &mut self.q1,
            Source::Q2 => &mut self.q2,
            Source::Mixing => unreachable!("mixing queue holds groups"),
        }
    }

    /// Coding partners for `head` (front of `src`), searched in q1 then q2 order.
    fn find_partners(
        &self,
        env: &NodeEnv,
        src: Source,
        head: &QueueEntry,
        now: Duration,
    ) -> Vec<(Source, usize)> {
        if !self.codable(env, head, now) {
            return Vec::new();
        }
        let candidates = || {
            [Source::Q1, Source::Q2].into_iter().flat_map(move |s| {
                self.queue(s)
                    .iter()
                    .enumerate()
                    .filter(move |(i, e)| !(s == src && *i == 0) && self.codable(env, e, now))
                    .map(move |(i, e)| (s, i, e))
            })
        };
        match self.protocol {
            Protocol::Plain => Vec::new(),
            Protocol::Cope => {
                let cands: Vec<(Source, usize, &QueueEntry)> = candidates().collect();
                let pkts: Vec<&NativePacket> = cands.iter().map(|(_, _, e)| &e.pkt).collect();
                let chosen = cope_select_upto(&head.pkt, &pkts, &self.knowledge, self.protocol.max_mix());
                chosen[1..]
                    .iter()
                    .map(|p| {
                        let (s, i, _) = cands.iter().find(|(_, _, e)| e.pkt.id == p.id).unwrap();
                        (*s, *i)
                    })
                    .collect()
            }
            Protocol::Bend | Protocol::FlexOnc => candidates()
                .find(|(_, _, e)| {
                    e.pkt.id != head.pkt.id
                        && e.pkt.next_hop != head.pkt.next_hop
                        && bend_mixable(&head.pkt, &e.pkt, env.topo)
                        && pool_certain(head, e)
                        && pool_certain(e, head)
                })
                .map(|(s, i, _)| vec![(s, i)])
                .unwrap_or_default(),
        }
    }

    /// Whether `e` may be XORed at all.
    ///
    /// Neighbors learned the packet when it arrived here, and their pools drop it one pool
    /// lifetime later. BEND-style pairing also needs a real previous hop, which a packet
    /// generated at this node lacks.
    fn codable(&self, env: &NodeEnv, e: &QueueEntry, now: Duration) -> bool {
        if e.attempts > 0 && !env.params.remix_retransmissions {
            return false;
        }
        if self.protocol != Protocol::Cope && !e.transit {
            return false;
        }
        let lands = now + env.airtime(crate::model::data_frame_bits(e.pkt.payload.len()));
        lands < e.enqueued_at + env.params.pool_lifetime
    }

    /// Picks and dequeues the next frame, arming ACK timers for its contents.
    pub fn select_transmission(&mut self, env: &NodeEnv, now: Duration) -> Option<(Frame, Vec<Action>)> {
        let (slot, choice) = self.choose(env, now).ok()?;
        self.rr = (slot + 1) % ROTATION.len();
        let entries = match choice {
            Choice::Report => {
                self.report_pending = false;
                self.counters.reports_sent += 1;
                return Some((Frame::report(self.id, self.reception_report()), Vec::new()));
            }
            Choice::Mixed => self.mixing_q.pop_front().unwrap(),
            Choice::Natives { head, partners } => {
                let mut taken: Vec<(Source, usize)> = partners;
                taken.push((head, 0));
                let mut removed: Vec<(Source, usize, QueueEntry)> = Vec::new();
                // Highest index first so earlier indices stay valid.
                let mut order = taken.clone();
                order.sort_by_key(|t| std::cmp::Reverse(t.1));
                for (s, i) in order {
                    let e = self.queue_mut(s).remove(i).unwrap();
                    removed.push((s, i, e));
                }
                // Head first, then partners in selection order.
                taken
                    .iter()
                    .rev()
                    .map(|key| {
                        let pos = removed.iter().position(|(s, i, _)| (*s, *i) == *key).unwrap();
                        removed.swap_remove(pos).2
                    })
                    .collect::<Vec<_>>()
            }
        };
        Some(self.emit(env, entries, now))
    }

    /// Queue entries keep their upstream `prev_hop`: a retry is judged mixable by who sent it here,
    /// not by this node. Only the transmitted copies carry this node as previous hop.
    fn emit(&mut self, env: &NodeEnv, entries: Vec<QueueEntry>, now: Duration) -> (Frame, Vec<Action>) {
        let mut outgoing = Vec::with_capacity(entries.len());
        for e in &entries {
            let mut pkt = e.pkt.clone();
            pkt.prev_hop = self.id;
            pkt.second_next_hop = match self.protocol {
                Protocol::Bend => env.tables.onward_hop(pkt.next_hop, pkt.dst).ok(),
                _ => None,
            };
            self.pool_insert(env, pkt.id, pkt.payload.clone(), now);
            outgoing.push(pkt);
        }
        let report = self.reception_report();
        let frame = if outgoing.len() == 1 {
            Frame::native(self.id, outgoing.pop().unwrap(), report)
        } else {
            let refs: Vec<&NativePacket> = outgoing.iter().collect();
            let coded = encode(&refs, self.id).expect("queued partners have distinct next hops");
            Frame::coded(coded, report)
        };
        let timeout = sender_timeout(
            self.protocol,
            entries.len(),
            env.topo.nbrs(self.id).len(),
            &env.params.timers,
        );
        let deadline = now + env.airtime(frame.bits) + timeout;
        self.counters.tx_data += 1;
        if entries.len() > 1 {
            self.counters.tx_coded += 1;
        }
        if entries.iter().any(|e| e.attempts > 0) {
            self.counters.retransmissions += 1;
        }
        let coded = entries.len() > 1;
        let mut out = Vec::with_capacity(entries.len());
        for mut e in entries {
            e.attempts += 1;
            e.last_coded = coded;
            let id = e.pkt.id;
            self.pending.insert(id, Pending { entry: e, deadline });
            out.push(Action::SetTimer {
                timer: NodeTimer::Retransmit(id),
                at: deadline,
            });
        }
        (frame, out)
    }

    // ---- bookkeeping ------------------------------------------------------------------

    fn learn(&mut self, frame: &Frame, now: Duration) {
        if self.protocol != Protocol::Cope {
            return;
        }
        for id in frame.reception_report.iter().chain(frame.carried_ids().iter()) {
            self.knowledge.record(frame.sender, *id, now);
        }
    }

    fn note_recent(&mut self, id: PayloadId) {
        if self.recent.contains(&id) {
            return;
        }
        self.recent.push_back(id);
        while self.recent.len() > RECEPTION_REPORT_LEN {
            self.recent.pop_front();
        }
    }

    fn pool_insert(&mut self, env: &NodeEnv, id: PayloadId, payload: Bytes, now: Duration) {
        if !self.protocol.codes() {
            return;
        }
        if self.pool.len() >= env.params.pool_cap && !self.pool.contains_key(&id) {
            let oldest = self
                .pool
                .iter()
                .min_by_key(|(k, e)| (e.at, **k))
                .map(|(k, _)| *k)
                .unwrap();
            self.pool.remove(&oldest);
        }
        self.pool.insert(id, PoolEntry { payload, at: now });
    }

    fn expire(&mut self, env: &NodeEnv, now: Duration) {
        const EVERY: Duration = Duration::from_millis(10);
        if now < self.last_expiry + EVERY {
            return;
        }
        self.last_expiry = now;
        let Some(cutoff) = now.checked_sub(env.params.pool_lifetime) else {
            return;
        };
        self.pool.retain(|_, e| e.at >= cutoff);
        self.knowledge.expire(cutoff);
    }
}

/// `s` is the packet's next hop or one of that hop's neighbors.
fn covers(topo: &Topology, s: NodeId, next_hop: NodeId) -> bool {
    s == next_hop || topo.is_neighbor(s, next_hop)
}

fn well_formed(c: &CodedPacket, sender: NodeId) -> bool {
    c.sender == sender
        && c.components.len() >= 2
        && c.components.iter().enumerate().all(|(i, a)| {
            c.components[..i]
                .iter()
                .all(|b| b.intended_next_hop != a.intended_next_hop && b.id != a.id)
        })
}

/// BEND-style pairing guesses that `a`'s receiver overheard `b`. After that guess already failed
/// once for `a`, only a partner the receiver itself sent here is decodable for certain.
fn pool_certain(a: &QueueEntry, b: &QueueEntry) -> bool {
    !(a.attempts > 0 && a.last_coded) || b.pkt.prev_hop == a.pkt.next_hop
}
