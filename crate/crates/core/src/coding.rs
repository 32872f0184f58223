//! Coding decisions for the three coding protocols: what to mix, who may help forward a
//! coded packet, in which order helpers act, and how long everybody waits.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use crate::error::PriorityError;
use crate::model::{decodable, CodedComponent, CodedPacket, NativePacket, NodeId, PayloadId};
use crate::phy::Topology;
use crate::routing::ForwardingTables;

/// Upper bound on natives per coded packet under COPE.
pub const COPE_MAX_MIX: usize = 4;
/// BEND and FlexONC mix pairs only.
pub const PAIR_MIX: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Protocol {
    /// 802.11-style store-and-forward, no coding.
    Plain,
    Cope,
    Bend,
    FlexOnc,
}

impl Protocol {
    pub const ALL: [Protocol; 4] = [Protocol::Plain, Protocol::Cope, Protocol::Bend, Protocol::FlexOnc];

    pub fn codes(self) -> bool {
        self != Protocol::Plain
    }

    /// Whether overhearing nodes may take over native packets.
    pub fn helps_natives(self) -> bool {
        matches!(self, Protocol::Bend | Protocol::FlexOnc)
    }

    pub fn max_mix(self) -> usize {
        match self {
            Protocol::Plain => 1,
            Protocol::Cope => COPE_MAX_MIX,
            Protocol::Bend | Protocol::FlexOnc => PAIR_MIX,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Plain => "plain",
            Protocol::Cope => "cope",
            Protocol::Bend => "bend",
            Protocol::FlexOnc => "flexonc",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "plain" | "802.11" | "80211" => Ok(Protocol::Plain),
            "cope" | "cope-sim" => Ok(Protocol::Cope),
            "bend" => Ok(Protocol::Bend),
            "flexonc" | "flex" => Ok(Protocol::FlexOnc),
            other => Err(format!("unknown protocol `{other}`")),
        }
    }
}

/// What a node believes each neighbor holds, learned from reception reports and ACKs.
#[derive(Clone, Debug, Default)]
pub struct NeighborKnowledge {
    held: HashMap<NodeId, HashMap<PayloadId, Duration>>,
}

impl NeighborKnowledge {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, neighbor: NodeId, id: PayloadId, now: Duration) {
        self.held.entry(neighbor).or_default().insert(id, now);
    }

    pub fn knows(&self, neighbor: NodeId, id: PayloadId) -> bool {
        self.held.get(&neighbor).is_some_and(|m| m.contains_key(&id))
    }

    /// Forgets entries learned before `cutoff`.
    pub fn expire(&mut self, cutoff: Duration) {
        for m in self.held.values_mut() {
            m.retain(|_, t| *t >= cutoff);
        }
    }

    pub fn len(&self) -> usize {
        self.held.values().map(HashMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimerParams {
    /// Hold increment per priority rank.
    pub ack_slot: Duration,
    /// ACK wait for a native frame.
    pub base_timeout: Duration,
}

impl Default for TimerParams {
    fn default() -> Self {
        Self {
            ack_slot: Duration::from_millis(2),
            base_timeout: Duration::from_millis(5),
        }
    }
}

/// Greedy COPE mixing: scan `candidates` in queue order and keep each packet that preserves
/// (a) one packet per next hop and (b) every next hop already holding all the other packets.
pub fn cope_select<'a>(
    head: &'a NativePacket,
    candidates: &[&'a NativePacket],
    knowledge: &NeighborKnowledge,
) -> Vec<&'a NativePacket> {
    cope_select_upto(head, candidates, knowledge, COPE_MAX_MIX)
}

pub fn cope_select_upto<'a>(
    head: &'a NativePacket,
    candidates: &[&'a NativePacket],
    knowledge: &NeighborKnowledge,
    max: usize,
) -> Vec<&'a NativePacket> {
    let mut set = vec![head];
    for &c in candidates {
        if set.len() >= max {
            break;
        }
        if set.iter().any(|p| p.next_hop == c.next_hop || p.id == c.id) {
            continue;
        }
        let fits = set.iter().all(|p| knowledge.knows(c.next_hop, p.id))
            && set.iter().all(|p| knowledge.knows(p.next_hop, c.id));
        if fits {
            set.push(c);
        }
    }
    set
}

/// BEND's pairing rule: each packet's next hop is the other's previous hop or one of that
/// hop's neighbors, so it has probably heard the other packet.
pub fn bend_mixable(p: &NativePacket, q: &NativePacket, topo: &Topology) -> bool {
    let covers = |next: NodeId, prev: NodeId| next == prev || topo.is_neighbor(prev, next);
    covers(p.next_hop, q.prev_hop) && covers(q.next_hop, p.prev_hop)
}

/// First component (header order) that a non-intended `receiver` may forward on behalf of
/// its intended next hop: the intended hop and that hop's own next hop are both neighbors
/// of the receiver, and the receiver can decode the component.
pub fn flexonc_eligible<F>(
    receiver: NodeId,
    coded: &CodedPacket,
    tables: &ForwardingTables,
    topo: &Topology,
    have: F,
) -> Option<CodedComponent>
where
    F: Fn(&PayloadId) -> bool,
{
    coded.components.iter().copied().find(|c| {
        if c.intended_next_hop == receiver {
            return false;
        }
        if !topo.is_neighbor(receiver, c.intended_next_hop) {
            return false;
        }
        if c.intended_next_hop != c.dst {
            match tables.neighbor_next_hop(receiver, c.intended_next_hop, c.dst) {
                Ok(onward) if topo.is_neighbor(receiver, onward) => {}
                _ => return false,
            }
        }
        decodable(coded, &have, c)
    })
}

/// Rank of `receiver` among the sender's neighbors, the intended forwarder first and the rest
/// in ascending address order.
pub fn priority_index(
    receiver: NodeId,
    sender: NodeId,
    intended: NodeId,
    topo: &Topology,
) -> Result<usize, PriorityError> {
    if receiver == intended {
        return Ok(0);
    }
    topo.nbrs(sender)
        .iter()
        .filter(|&&m| m != intended)
        .position(|&m| m == receiver)
        .map(|i| i + 1)
        .ok_or(PriorityError::NotInList { receiver, sender })
}

/// The full priority list, for inspection.
pub fn priority_list(sender: NodeId, intended: NodeId, topo: &Topology) -> Vec<NodeId> {
    std::iter::once(intended)
        .chain(topo.nbrs(sender).iter().copied().filter(|&m| m != intended))
        .collect()
}

pub fn helper_hold_time(index: usize, params: &TimerParams) -> Duration {
    params.ack_slot * index as u32
}

/// How long a sender waits for ACKs before retransmitting.
pub fn sender_timeout(
    protocol: Protocol,
    n_mixed: usize,
    n_sender_neighbors: usize,
    params: &TimerParams,
) -> Duration {
    if n_mixed <= 1 {
        return params.base_timeout;
    }
    match protocol {
        Protocol::Plain => params.base_timeout,
        Protocol::Cope | Protocol::Bend => params.base_timeout * n_mixed as u32,
        Protocol::FlexOnc => params.base_timeout + params.ack_slot * n_sender_neighbors as u32,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::encode;
    use crate::routing::build_forwarding_tables;
    use bytes::Bytes;

    fn eight_node() -> Topology {
        let mut pos: Vec<(f64, f64)> = (0..5).map(|i| (150.0 * i as f64, 0.0)).collect();
        pos.extend((1..4).map(|i| (150.0 * i as f64, 150.0)));
        Topology::new(pos, 250.0).unwrap()
    }

    fn native(flow: u32, seq: u64, src: u32, dst: u32, prev: u32, next: u32) -> NativePacket {
        NativePacket {
            id: PayloadId::new(flow, seq),
            src: NodeId(src),
            dst: NodeId(dst),
            prev_hop: NodeId(prev),
            next_hop: NodeId(next),
            second_next_hop: None,
            payload: Bytes::from(vec![seq as u8; 16]),
        }
    }

    /// P0 travels N4 -> N0, P2 travels N0 -> N4; both queued at N1.
    fn p0_p2() -> (NativePacket, NativePacket) {
        (native(1, 0, 4, 0, 2, 0), native(0, 2, 0, 4, 0, 2))
    }

    #[test]
    fn protocol_names_round_trip() {
        for p in Protocol::ALL {
            assert_eq!(p.name().parse::<Protocol>().unwrap(), p);
        }
        assert_eq!("802.11".parse::<Protocol>().unwrap(), Protocol::Plain);
        assert!("aloha".parse::<Protocol>().is_err());
    }

    #[test]
    fn cope_x_topology_pair() {
        // Relay 2 holds a (S1=0 -> D1=3) and b (S2=1 -> D2=4).
        let a = native(0, 0, 0, 3, 0, 3);
        let b = native(1, 0, 1, 4, 1, 4);
        let mut k = NeighborKnowledge::new();
        k.record(NodeId(3), b.id, Duration::ZERO);
        k.record(NodeId(4), a.id, Duration::ZERO);
        let got = cope_select(&a, &[&b], &k);
        assert_eq!(got.iter().map(|p| p.id).collect::<Vec<_>>(), vec![a.id, b.id]);

        let half = {
            let mut k = NeighborKnowledge::new();
            k.record(NodeId(3), b.id, Duration::ZERO);
            k
        };
        assert_eq!(cope_select(&a, &[&b], &half).len(), 1);
        assert_eq!(cope_select(&a, &[], &k).len(), 1);
    }

    #[test]
    fn bend_reference_pair_is_mixable_and_symmetric() {
        let topo = eight_node();
        let (p0, p2) = p0_p2();
        assert!(bend_mixable(&p0, &p2, &topo));
        assert!(bend_mixable(&p2, &p0, &topo));
        // N0->N1 and N3->N2: N1 is out of range of N3.
        let far = native(0, 9, 0, 4, 0, 1);
        let back = native(1, 9, 4, 0, 3, 2);
        assert!(!bend_mixable(&far, &back, &topo));
    }

    #[test]
    fn eligibility_worked_example() {
        let topo = eight_node();
        let tables = build_forwarding_tables(&topo);
        let (p0, p2) = p0_p2();
        let coded = encode(&[&p0, &p2], NodeId(1)).unwrap();
        let has_p0 = |id: &PayloadId| *id == p0.id;
        let got = flexonc_eligible(NodeId(6), &coded, &tables, &topo, has_p0).unwrap();
        assert_eq!(got.id, p2.id);
        assert!(flexonc_eligible(NodeId(0), &coded, &tables, &topo, has_p0).is_none());
        assert!(flexonc_eligible(NodeId(5), &coded, &tables, &topo, has_p0).is_none());
        assert!(flexonc_eligible(NodeId(6), &coded, &tables, &topo, |_| false).is_none());
    }

    #[test]
    fn priority_examples() {
        let topo = eight_node();
        assert_eq!(
            priority_list(NodeId(1), NodeId(2), &topo),
            [2, 0, 5, 6].map(NodeId)
        );
        assert_eq!(priority_index(NodeId(6), NodeId(1), NodeId(2), &topo).unwrap(), 3);
        assert_eq!(priority_index(NodeId(2), NodeId(1), NodeId(2), &topo).unwrap(), 0);
        assert_eq!(priority_index(NodeId(0), NodeId(1), NodeId(2), &topo).unwrap(), 1);
        assert!(priority_index(NodeId(7), NodeId(1), NodeId(2), &topo).is_err());
    }

    #[test]
    fn hold_times_are_linear() {
        let p = TimerParams::default();
        assert_eq!(helper_hold_time(1, &p), Duration::from_millis(2));
        assert_eq!(helper_hold_time(3, &p), Duration::from_millis(6));
        for i in 1..20 {
            assert_eq!(helper_hold_time(i + 1, &p) - helper_hold_time(i, &p), p.ack_slot);
        }
    }

    #[test]
    fn sender_timeouts() {
        let p = TimerParams::default();
        assert_eq!(
            sender_timeout(Protocol::FlexOnc, 2, 4, &p),
            Duration::from_millis(13)
        );
        assert_eq!(
            sender_timeout(Protocol::Bend, 2, 4, &p),
            Duration::from_millis(10)
        );
        for proto in Protocol::ALL {
            assert_eq!(sender_timeout(proto, 1, 4, &p), p.base_timeout);
        }
    }
}
