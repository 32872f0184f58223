//! Deterministic discrete-event run of one scenario under one protocol.

pub mod event;
pub mod mac;
pub mod metrics;
pub mod traffic;

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::time::Duration;

use bytes::Bytes;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coding::Protocol;
use crate::error::SimError;
use crate::model::{Ack, FlowId, Frame, FrameBody, NodeId, PayloadId};
use crate::node::{Action, NodeEnv, NodeParams, NodeState, Plan};
use crate::phy::{sample_reception, ChannelParams, Topology, DEFAULT_DATA_RATE_BPS};
use crate::routing::{build_forwarding_tables, ForwardingTables};

pub use event::{Event, EventKind, EventQueue};
pub use mac::{draw_backoff, mac_grant, Grant, MacParams};
pub use metrics::{throughput, FlowMetrics, Metrics, Throughput};
pub use traffic::{cbr_source, FlowSpec};

pub const DEFAULT_EVENT_LIMIT: u64 = 100_000_000;
pub const DEFAULT_PAYLOAD_BYTES: usize = 1000;

#[derive(Clone, Debug)]
pub struct Scenario {
    pub topo: Topology,
    pub flows: Vec<FlowSpec>,
    pub protocol: Protocol,
    pub ber: f64,
    pub payload_bytes: usize,
    /// Extra time after the last flow ends for in-flight packets to land.
    pub drain: Duration,
    pub node: NodeParams,
    pub mac: MacParams,
    pub data_rate_bps: u64,
    pub event_limit: u64,
}

impl Scenario {
    pub fn new(topo: Topology, flows: Vec<FlowSpec>, protocol: Protocol, ber: f64) -> Self {
        Self {
            topo,
            flows,
            protocol,
            ber,
            payload_bytes: DEFAULT_PAYLOAD_BYTES,
            drain: Duration::from_secs(1),
            node: NodeParams::default(),
            mac: MacParams::default(),
            data_rate_bps: DEFAULT_DATA_RATE_BPS,
            event_limit: DEFAULT_EVENT_LIMIT,
        }
    }

    /// Traffic period: the end of the latest flow. Throughput is measured over this.
    pub fn duration(&self) -> Duration {
        self.flows
            .iter()
            .map(FlowSpec::end)
            .max()
            .unwrap_or(Duration::ZERO)
    }

    pub fn validate(&self, tables: &ForwardingTables) -> Result<(), SimError> {
        if !(0.0..1.0).contains(&self.ber) {
            return Err(SimError::Invalid(format!("ber {} outside [0, 1)", self.ber)));
        }
        if self.payload_bytes == 0 {
            return Err(SimError::Invalid("payload size must be positive".into()));
        }
        for (i, f) in self.flows.iter().enumerate() {
            for n in [f.src, f.dst] {
                self.topo.position(n)?;
            }
            if f.interval.is_zero() {
                return Err(SimError::Invalid(format!("flow {i}: interval must be positive")));
            }
            tables.ensure_route(f.src, f.dst)?;
        }
        Ok(())
    }
}

/// Deterministic payload bytes for a datagram, independent of the run's random stream.
pub fn payload_for(id: PayloadId, len: usize) -> Bytes {
    let mut rng = ChaCha8Rng::seed_from_u64(((id.flow.0 as u64) << 40) ^ id.seq);
    let mut buf = vec![0u8; len];
    rng.fill_bytes(&mut buf);
    Bytes::from(buf)
}

pub fn run(scenario: &Scenario, seed: u64) -> Result<Metrics, SimError> {
    run_with_rng(scenario, ChaCha8Rng::seed_from_u64(seed))
}

/// Same as [`run`] with a caller-supplied random stream.
pub fn run_with_rng<R: RngCore>(scenario: &Scenario, rng: R) -> Result<Metrics, SimError> {
    let tables = build_forwarding_tables(&scenario.topo);
    scenario.validate(&tables)?;
    let mut engine = Engine::new(scenario, &tables, rng);
    engine.run()?;
    Ok(engine.finish())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Access {
    Data,
    HelperAck,
}

#[derive(Debug, Default)]
struct Mac {
    /// Ongoing transmissions this node senses, including its own.
    busy: u32,
    idle_since: Duration,
    transmitting: bool,
    backoff: Option<u32>,
    countdown_start: Duration,
    attempt: Option<(Duration, u64, Access)>,
    gen: u64,
    helper_acks: VecDeque<PayloadId>,
    wake_at: Option<Duration>,
}

struct Tx {
    frame: Frame,
    end: Duration,
    /// Neighbors whose copy is destroyed by an overlapping transmission.
    corrupted: HashSet<NodeId>,
}

struct Engine<'a, R> {
    sc: &'a Scenario,
    env: NodeEnv<'a>,
    channel: ChannelParams,
    rng: R,
    queue: EventQueue,
    now: Duration,
    end: Duration,
    nodes: Vec<NodeState>,
    macs: Vec<Mac>,
    sensed_by: Vec<Vec<NodeId>>,
    active: BTreeMap<u64, Tx>,
    next_tx: u64,
    delivered: Vec<HashSet<u64>>,
    metrics: Metrics,
    ack_airtime: Duration,
}

impl<'a, R: RngCore> Engine<'a, R> {
    fn new(sc: &'a Scenario, tables: &'a ForwardingTables, rng: R) -> Self {
        let env = NodeEnv {
            topo: &sc.topo,
            tables,
            protocol: sc.protocol,
            params: &sc.node,
            data_rate_bps: sc.data_rate_bps,
        };
        let sensed_by = sc
            .topo
            .nodes()
            .map(|n| {
                let mut v = sc.topo.within(n, sc.mac.carrier_sense_range);
                v.push(n);
                v.sort();
                v
            })
            .collect();
        let flows = sc
            .flows
            .iter()
            .enumerate()
            .map(|(i, f)| FlowMetrics {
                flow: FlowId(i as u32),
                src: f.src,
                dst: f.dst,
                ..FlowMetrics::default()
            })
            .collect();
        let duration = sc.duration();
        let mut queue = EventQueue::new();
        for (i, f) in sc.flows.iter().enumerate() {
            if let Some((t, seq)) = cbr_source(f).next() {
                queue.push(t, EventKind::Traffic { flow: i, seq });
            }
        }
        Self {
            sc,
            env,
            channel: ChannelParams {
                ber: sc.ber,
                data_rate_bps: sc.data_rate_bps,
            },
            rng,
            queue,
            now: Duration::ZERO,
            end: if duration.is_zero() {
                Duration::ZERO
            } else {
                duration + sc.drain
            },
            nodes: sc.topo.nodes().map(|n| NodeState::new(n, sc.protocol)).collect(),
            macs: sc.topo.nodes().map(|_| Mac::default()).collect(),
            sensed_by,
            active: BTreeMap::new(),
            next_tx: 0,
            delivered: vec![HashSet::new(); sc.flows.len()],
            metrics: Metrics {
                flows,
                duration,
                table_bytes: tables.table_bytes_exchanged(),
                ..Metrics::default()
            },
            ack_airtime: env.airtime(
                Frame::ack(
                    Ack {
                        ack_sender: NodeId(0),
                        payload: PayloadId::new(0, 0),
                    },
                    Vec::new(),
                )
                .bits,
            ),
        }
    }

    fn run(&mut self) -> Result<(), SimError> {
        while let Some(t) = self.queue.peek_time() {
            if t >= self.end {
                break;
            }
            let ev = self.queue.pop().unwrap();
            debug_assert!(ev.time >= self.now, "event scheduled in the past");
            self.now = ev.time;
            self.metrics.events += 1;
            if self.metrics.events > self.sc.event_limit {
                return Err(SimError::EventLimit {
                    limit: self.sc.event_limit,
                    at_secs: self.now.as_secs_f64(),
                });
            }
            self.handle(ev.kind)?;
        }
        Ok(())
    }

    fn finish(mut self) -> Metrics {
        for n in &self.nodes {
            self.metrics.add_node(&n.counters);
            self.metrics.backlog_at_end += n.backlog() as u64;
        }
        self.metrics
    }

    fn handle(&mut self, kind: EventKind) -> Result<(), SimError> {
        match kind {
            EventKind::Traffic { flow, seq } => self.on_traffic(flow, seq),
            EventKind::FrameEnd { tx } => self.on_frame_end(tx)?,
            EventKind::AckStart { node, payload } => {
                if self.macs[node.index()].transmitting {
                    self.metrics.acks_skipped += 1;
                } else {
                    self.send_ack(node, payload);
                }
            }
            EventKind::MacGrant { node, gen } => self.on_grant(node, gen)?,
            EventKind::Timer { node, timer } => {
                let actions = self.nodes[node.index()].on_timer(&self.env, timer, self.now);
                self.apply(node, actions)?;
            }
            EventKind::Wake { node } => {
                let mac = &mut self.macs[node.index()];
                if mac.wake_at == Some(self.now) {
                    mac.wake_at = None;
                }
                self.schedule_access(node);
            }
        }
        Ok(())
    }

    fn on_traffic(&mut self, flow: usize, seq: u64) {
        let spec = &self.sc.flows[flow];
        let id = PayloadId::new(flow as u32, seq);
        let payload = payload_for(id, self.sc.payload_bytes);
        let m = &mut self.metrics.flows[flow];
        m.generated += 1;
        m.generated_bytes += payload.len() as u64;
        let src = spec.src;
        self.nodes[src.index()].originate(&self.env, id, spec.dst, payload, self.now);
        let next = Duration::from_nanos(spec.interval.as_nanos() as u64 * (seq + 1));
        if next < spec.duration {
            self.queue
                .push(spec.start + next, EventKind::Traffic { flow, seq: seq + 1 });
        }
        self.schedule_access(src);
    }

    fn start_tx(&mut self, frame: Frame) {
        let sender = frame.sender;
        let end = self.now + self.env.airtime(frame.bits);
        let mut corrupted = HashSet::new();
        let topo = &self.sc.topo;
        for other in self.active.values_mut() {
            let o = other.frame.sender;
            // Half duplex: neither sender can hear the other's frame.
            for &r in topo.nbrs(o) {
                if r == sender || topo.is_neighbor(r, sender) {
                    other.corrupted.insert(r);
                }
            }
            for &r in topo.nbrs(sender) {
                if r == o || topo.is_neighbor(r, o) {
                    corrupted.insert(r);
                }
            }
        }
        let id = self.next_tx;
        self.next_tx += 1;
        self.active.insert(
            id,
            Tx {
                frame,
                end,
                corrupted,
            },
        );
        self.macs[sender.index()].transmitting = true;
        for i in 0..self.sensed_by[sender.index()].len() {
            let m = self.sensed_by[sender.index()][i];
            let mac = &mut self.macs[m.index()];
            mac.busy += 1;
            if mac.busy == 1 {
                self.freeze(m);
            }
        }
        self.queue.push(end, EventKind::FrameEnd { tx: id });
    }

    /// Medium just turned busy for `m`: suspend a pending attempt unless it fires this instant.
    fn freeze(&mut self, m: NodeId) {
        let now = self.now;
        let slot = self.sc.mac.slot;
        let mac = &mut self.macs[m.index()];
        let Some((at, _, access)) = mac.attempt else {
            return;
        };
        if at <= now {
            return;
        }
        mac.attempt = None;
        mac.gen += 1;
        if access == Access::Data {
            let elapsed = if now > mac.countdown_start {
                ((now - mac.countdown_start).as_nanos() / slot.as_nanos()) as u32
            } else {
                0
            };
            mac.backoff = mac.backoff.map(|b| b.saturating_sub(elapsed));
        }
    }

    fn on_frame_end(&mut self, id: u64) -> Result<(), SimError> {
        let tx = self
            .active
            .remove(&id)
            .expect("frame end for unknown transmission");
        debug_assert_eq!(tx.end, self.now);
        let sender = tx.frame.sender;
        self.macs[sender.index()].transmitting = false;
        let mut freed = Vec::new();
        for &m in &self.sensed_by[sender.index()] {
            let mac = &mut self.macs[m.index()];
            mac.busy -= 1;
            if mac.busy == 0 {
                mac.idle_since = self.now;
                freed.push(m);
            }
        }
        let heard = sample_reception(&tx.frame, &self.sc.topo, &self.channel, &mut self.rng);
        for r in heard {
            if tx.corrupted.contains(&r) {
                self.metrics.collisions += 1;
                continue;
            }
            let node = &mut self.nodes[r.index()];
            let actions = match &tx.frame.body {
                FrameBody::Native(_) | FrameBody::Coded(_) => {
                    node.on_data_frame(&self.env, &tx.frame, self.now)
                }
                FrameBody::Ack(a) => node.on_ack(&self.env, &tx.frame, *a, self.now),
                FrameBody::Report => {
                    node.on_report(&self.env, &tx.frame, self.now);
                    Vec::new()
                }
            };
            self.apply(r, actions)?;
        }
        for m in freed {
            self.schedule_access(m);
        }
        Ok(())
    }

    fn apply(&mut self, node: NodeId, actions: Vec<Action>) -> Result<(), SimError> {
        for a in actions {
            match a {
                Action::Ack { payload, slot } => {
                    let gap = self.sc.mac.sifs;
                    let at = self.now + gap + (self.ack_airtime + gap) * slot as u32;
                    self.queue.push(at, EventKind::AckStart { node, payload });
                }
                Action::HelperAck { payload } => {
                    self.macs[node.index()].helper_acks.push_back(payload);
                    self.schedule_access(node);
                }
                Action::Deliver { id, payload } => self.deliver(node, id, payload)?,
                Action::SetTimer { timer, at } => {
                    self.queue.push(at, EventKind::Timer { node, timer });
                }
                Action::Wake => self.schedule_access(node),
            }
        }
        self.check_bounds(node)
    }

    fn deliver(&mut self, node: NodeId, id: PayloadId, payload: Bytes) -> Result<(), SimError> {
        let flow = id.flow.0 as usize;
        let spec = self
            .sc
            .flows
            .get(flow)
            .ok_or_else(|| SimError::Invalid(format!("delivery of unknown flow {id}")))?;
        if spec.dst != node {
            return Err(SimError::Invalid(format!(
                "{id} delivered at {node}, not its destination"
            )));
        }
        if payload != payload_for(id, self.sc.payload_bytes) {
            return Err(SimError::Invalid(format!(
                "{id} delivered with corrupted payload"
            )));
        }
        let m = &mut self.metrics.flows[flow];
        if self.delivered[flow].insert(id.seq) {
            m.delivered += 1;
            m.delivered_bytes += payload.len() as u64;
        } else {
            m.duplicate_deliveries += 1;
        }
        Ok(())
    }

    fn check_bounds(&self, node: NodeId) -> Result<(), SimError> {
        let n = &self.nodes[node.index()];
        let p = &self.sc.node;
        if n.pool_len() > p.pool_cap || n.ack_cache_len() > p.ack_cache_cap {
            return Err(SimError::Invalid(format!("{node} exceeded a buffer bound")));
        }
        if !n.pending_and_helper_disjoint() {
            return Err(SimError::Invalid(format!(
                "{node} holds a payload both pending and in a helper timer"
            )));
        }
        Ok(())
    }

    fn send_ack(&mut self, node: NodeId, payload: PayloadId) {
        let report = self.nodes[node.index()].reception_report();
        self.metrics.acks_sent += 1;
        self.start_tx(Frame::ack(
            Ack {
                ack_sender: node,
                payload,
            },
            report,
        ));
    }

    /// Starts an access attempt if the node is idle, senses an idle medium and has something to send.
    fn schedule_access(&mut self, node: NodeId) {
        let now = self.now;
        let i = node.index();
        {
            let mac = &self.macs[i];
            if mac.transmitting || mac.attempt.is_some() || mac.busy > 0 {
                return;
            }
        }
        if !self.macs[i].helper_acks.is_empty() {
            let mac = &mut self.macs[i];
            let at = now.max(mac.idle_since + self.sc.mac.pifs);
            mac.gen += 1;
            mac.attempt = Some((at, mac.gen, Access::HelperAck));
            self.queue.push(at, EventKind::MacGrant { node, gen: mac.gen });
            return;
        }
        match self.nodes[i].plan(&self.env, now) {
            Plan::Ready => {
                let b = match self.macs[i].backoff {
                    Some(b) => b,
                    None => draw_backoff(&mut self.rng, self.sc.mac.cw),
                };
                let mac = &mut self.macs[i];
                mac.backoff = Some(b);
                let start = now.max(mac.idle_since + self.sc.mac.difs);
                mac.countdown_start = start;
                let at = start + self.sc.mac.slot * b;
                mac.gen += 1;
                mac.attempt = Some((at, mac.gen, Access::Data));
                self.queue.push(at, EventKind::MacGrant { node, gen: mac.gen });
            }
            Plan::WaitUntil(t) => {
                let mac = &mut self.macs[i];
                if mac.wake_at.is_none_or(|w| t < w) {
                    mac.wake_at = Some(t);
                    self.queue.push(t, EventKind::Wake { node });
                }
            }
            Plan::Idle => {}
        }
    }

    fn on_grant(&mut self, node: NodeId, gen: u64) -> Result<(), SimError> {
        let i = node.index();
        let Some((_, g, access)) = self.macs[i].attempt else {
            return Ok(());
        };
        if g != gen {
            return Ok(());
        }
        self.macs[i].attempt = None;
        match access {
            Access::HelperAck => {
                let payload = self.macs[i].helper_acks.pop_front().unwrap();
                if self.nodes[i].helper_ack_valid(&payload) {
                    self.send_ack(node, payload);
                } else {
                    self.metrics.helper_acks_stale += 1;
                    self.schedule_access(node);
                }
            }
            Access::Data => {
                self.macs[i].backoff = None;
                match self.nodes[i].select_transmission(&self.env, self.now) {
                    Some((frame, actions)) => {
                        self.start_tx(frame);
                        self.apply(node, actions)?;
                    }
                    None => self.schedule_access(node),
                }
            }
        }
        Ok(())
    }
}
