//! Identifiers, packets, frames and the XOR codec shared by every protocol.

use std::collections::HashMap;
use std::fmt;

use bytes::Bytes;

use crate::error::CodecError;

/// On-air header overhead of a data frame, in bytes.
pub const DATA_HEADER_BYTES: usize = 40;
/// On-air size of an ACK frame, in bytes.
pub const ACK_FRAME_BYTES: usize = 14;
/// Per-entry cost of a reception report carried in a standalone report frame.
pub const REPORT_ENTRY_BYTES: usize = 4;
/// Number of recently held packet IDs piggybacked on every frame.
pub const RECEPTION_REPORT_LEN: usize = 8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "N{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowId(pub u32);

/// Identity of one generated datagram. Never reused within a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PayloadId {
    pub flow: FlowId,
    pub seq: u64,
}

impl PayloadId {
    pub fn new(flow: u32, seq: u64) -> Self {
        Self {
            flow: FlowId(flow),
            seq,
        }
    }
}

impl fmt::Display for PayloadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}#{}", self.flow.0, self.seq)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NativePacket {
    pub id: PayloadId,
    pub src: NodeId,
    pub dst: NodeId,
    pub prev_hop: NodeId,
    pub next_hop: NodeId,
    /// Only stamped under BEND.
    pub second_next_hop: Option<NodeId>,
    pub payload: Bytes,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CodedComponent {
    pub id: PayloadId,
    pub src: NodeId,
    pub dst: NodeId,
    pub intended_next_hop: NodeId,
}

impl From<&NativePacket> for CodedComponent {
    fn from(p: &NativePacket) -> Self {
        Self {
            id: p.id,
            src: p.src,
            dst: p.dst,
            intended_next_hop: p.next_hop,
        }
    }
}

/// XOR of two or more native payloads plus the per-component routing header.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodedPacket {
    pub components: Vec<CodedComponent>,
    pub payload: Bytes,
    pub sender: NodeId,
}

impl CodedPacket {
    pub fn component_index(&self, id: PayloadId) -> Option<usize> {
        self.components.iter().position(|c| c.id == id)
    }

    pub fn intended_for(&self, node: NodeId) -> impl Iterator<Item = (usize, &CodedComponent)> {
        self.components
            .iter()
            .enumerate()
            .filter(move |(_, c)| c.intended_next_hop == node)
    }
}

/// Link-layer acknowledgment. Identified by the node that sent it, not the one it is addressed to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ack {
    pub ack_sender: NodeId,
    pub payload: PayloadId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FrameBody {
    Native(NativePacket),
    Coded(CodedPacket),
    Ack(Ack),
    /// Standalone reception report (COPE control traffic).
    Report,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameKind {
    Data,
    Ack,
    Control,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub sender: NodeId,
    pub body: FrameBody,
    pub reception_report: Vec<PayloadId>,
    pub bits: u64,
}

impl Frame {
    pub fn native(sender: NodeId, pkt: NativePacket, report: Vec<PayloadId>) -> Self {
        let bits = data_frame_bits(pkt.payload.len());
        Self {
            sender,
            body: FrameBody::Native(pkt),
            reception_report: report,
            bits,
        }
    }

    pub fn coded(coded: CodedPacket, report: Vec<PayloadId>) -> Self {
        let bits = data_frame_bits(coded.payload.len());
        Self {
            sender: coded.sender,
            body: FrameBody::Coded(coded),
            reception_report: report,
            bits,
        }
    }

    pub fn ack(ack: Ack, report: Vec<PayloadId>) -> Self {
        Self {
            sender: ack.ack_sender,
            body: FrameBody::Ack(ack),
            reception_report: report,
            bits: (ACK_FRAME_BYTES * 8) as u64,
        }
    }

    pub fn report(sender: NodeId, report: Vec<PayloadId>) -> Self {
        let bits = ((ACK_FRAME_BYTES + REPORT_ENTRY_BYTES * report.len()) * 8) as u64;
        Self {
            sender,
            body: FrameBody::Report,
            reception_report: report,
            bits,
        }
    }

    pub fn kind(&self) -> FrameKind {
        match self.body {
            FrameBody::Native(_) | FrameBody::Coded(_) => FrameKind::Data,
            FrameBody::Ack(_) => FrameKind::Ack,
            FrameBody::Report => FrameKind::Control,
        }
    }

    /// Payload IDs the transmitter necessarily holds.
    pub fn carried_ids(&self) -> Vec<PayloadId> {
        match &self.body {
            FrameBody::Native(p) => vec![p.id],
            FrameBody::Coded(c) => c.components.iter().map(|c| c.id).collect(),
            FrameBody::Ack(a) => vec![a.payload],
            FrameBody::Report => Vec::new(),
        }
    }
}

pub fn data_frame_bits(payload_len: usize) -> u64 {
    ((DATA_HEADER_BYTES + payload_len) * 8) as u64
}

/// Bytewise XOR; the shorter input is treated as zero-padded.
pub fn xor_payloads(a: &[u8], b: &[u8]) -> Vec<u8> {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut out = long.to_vec();
    xor_into(&mut out, short);
    out
}

fn xor_into(acc: &mut Vec<u8>, other: &[u8]) {
    if other.len() > acc.len() {
        acc.resize(other.len(), 0);
    }
    for (x, y) in acc.iter_mut().zip(other) {
        *x ^= *y;
    }
}

/// Mixes `natives` into one coded packet. Next hops must be pairwise distinct.
pub fn encode(natives: &[&NativePacket], sender: NodeId) -> Result<CodedPacket, CodecError> {
    if natives.len() < 2 {
        return Err(CodecError::TooFewComponents(natives.len()));
    }
    for (i, p) in natives.iter().enumerate() {
        if let Some(q) = natives[..i].iter().find(|q| q.next_hop == p.next_hop) {
            return Err(CodecError::DuplicateNextHop {
                next_hop: p.next_hop,
                first: q.id,
                second: p.id,
            });
        }
        if natives[..i].iter().any(|q| q.id == p.id) {
            return Err(CodecError::DuplicatePayload(p.id));
        }
    }
    let mut acc = Vec::new();
    for p in natives {
        xor_into(&mut acc, &p.payload);
    }
    Ok(CodedPacket {
        components: natives.iter().map(|p| CodedComponent::from(*p)).collect(),
        payload: Bytes::from(acc),
        sender,
    })
}

/// True iff every component other than `target` is available in `have`.
pub fn decodable<F>(coded: &CodedPacket, have: F, target: &CodedComponent) -> bool
where
    F: Fn(&PayloadId) -> bool,
{
    coded
        .components
        .iter()
        .filter(|c| c.id != target.id)
        .all(|c| have(&c.id))
}

/// Peels `target` out of `coded` using payloads from `pool`.
pub fn decode(
    coded: &CodedPacket,
    pool: &HashMap<PayloadId, Bytes>,
    target: &CodedComponent,
) -> Result<NativePacket, CodecError> {
    decode_with(coded, |id| pool.get(id).cloned(), target)
}

pub(crate) fn decode_with<F>(
    coded: &CodedPacket,
    lookup: F,
    target: &CodedComponent,
) -> Result<NativePacket, CodecError>
where
    F: Fn(&PayloadId) -> Option<Bytes>,
{
    if coded.component_index(target.id).is_none() {
        return Err(CodecError::NotAComponent(target.id));
    }
    let mut acc = coded.payload.to_vec();
    for c in coded.components.iter().filter(|c| c.id != target.id) {
        let other = lookup(&c.id).ok_or(CodecError::NotDecodable(c.id))?;
        xor_into(&mut acc, &other);
    }
    Ok(NativePacket {
        id: target.id,
        src: target.src,
        dst: target.dst,
        prev_hop: coded.sender,
        next_hop: target.intended_next_hop,
        second_next_hop: None,
        payload: Bytes::from(acc),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pkt(seq: u64, next: u32, payload: &[u8]) -> NativePacket {
        NativePacket {
            id: PayloadId::new(seq as u32 % 2, seq),
            src: NodeId(9),
            dst: NodeId(next + 10),
            prev_hop: NodeId(1),
            next_hop: NodeId(next),
            second_next_hop: None,
            payload: Bytes::copy_from_slice(payload),
        }
    }

    #[test]
    fn xor_examples() {
        assert_eq!(xor_payloads(&[0x42, 0x17], &[0x42, 0x17]), vec![0, 0]);
        assert_eq!(xor_payloads(&[0xAB], &[0x00]), vec![0xAB]);
        assert_eq!(xor_payloads(&[0x0F], &[0x55]), vec![0x5A]);
    }

    #[test]
    fn xor_pads_shorter_input() {
        assert_eq!(xor_payloads(&[0x01], &[0x01, 0x02, 0x03]), vec![0x00, 0x02, 0x03]);
        assert_eq!(xor_payloads(&[], &[0x07]), vec![0x07]);
    }

    #[test]
    fn encode_pair_and_decode() {
        let p0 = pkt(0, 0, &[1, 2, 3, 4]);
        let p2 = pkt(2, 2, &[9, 8, 7, 6]);
        let coded = encode(&[&p0, &p2], NodeId(1)).unwrap();
        assert_eq!(coded.components[0].intended_next_hop, NodeId(0));
        assert_eq!(coded.components[1].intended_next_hop, NodeId(2));
        assert_eq!(&coded.payload[..], &xor_payloads(&p0.payload, &p2.payload)[..]);

        let pool: HashMap<_, _> = [(p0.id, p0.payload.clone())].into_iter().collect();
        let got = decode(&coded, &pool, &coded.components[1]).unwrap();
        assert_eq!(got.payload, p2.payload);
        assert_eq!(got.prev_hop, NodeId(1));
        assert_eq!(got.next_hop, NodeId(2));
    }

    #[test]
    fn identical_payloads_cancel() {
        let body = vec![0x5Cu8; 1000];
        let a = pkt(0, 0, &body);
        let b = pkt(1, 1, &body);
        let coded = encode(&[&a, &b], NodeId(3)).unwrap();
        assert!(coded.payload.iter().all(|&x| x == 0));
        let pool: HashMap<_, _> = [(a.id, a.payload.clone())].into_iter().collect();
        assert_eq!(
            decode(&coded, &pool, &coded.components[1]).unwrap().payload,
            a.payload
        );
    }

    #[test]
    fn same_next_hop_rejected() {
        let a = pkt(0, 1, &[1]);
        let b = pkt(1, 1, &[2]);
        assert!(matches!(
            encode(&[&a, &b], NodeId(5)),
            Err(CodecError::DuplicateNextHop { .. })
        ));
        assert!(matches!(
            encode(&[&a], NodeId(5)),
            Err(CodecError::TooFewComponents(1))
        ));
    }

    #[test]
    fn empty_pool_not_decodable() {
        let p0 = pkt(0, 0, &[1, 2]);
        let p2 = pkt(2, 2, &[3, 4]);
        let coded = encode(&[&p0, &p2], NodeId(1)).unwrap();
        let pool = HashMap::new();
        assert!(matches!(
            decode(&coded, &pool, &coded.components[1]),
            Err(CodecError::NotDecodable(id)) if id == p0.id
        ));
        assert!(!decodable(
            &coded,
            |id| pool.contains_key(id),
            &coded.components[1]
        ));
    }

    #[test]
    fn decodable_three_components_enumerated() {
        let ps: Vec<_> = (0..3).map(|i| pkt(i, i as u32, &[i as u8])).collect();
        let refs: Vec<_> = ps.iter().collect();
        let coded = encode(&refs, NodeId(7)).unwrap();
        let target = coded.components[0];
        // Oracle: decodable exactly when the pool is a superset of the other two.
        for mask in 0u8..8 {
            let pool: Vec<PayloadId> = (0..3)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| ps[i].id)
                .collect();
            let want = pool.contains(&ps[1].id) && pool.contains(&ps[2].id);
            assert_eq!(
                decodable(&coded, |id| pool.contains(id), &target),
                want,
                "mask {mask:03b}"
            );
        }
    }

    #[test]
    fn unequal_lengths_round_trip() {
        let short = pkt(0, 0, &[0xAA]);
        let long = pkt(1, 1, &[0x01, 0x02, 0x03]);
        let coded = encode(&[&short, &long], NodeId(4)).unwrap();
        assert_eq!(coded.payload.len(), 3);
        let pool: HashMap<_, _> = [(short.id, short.payload.clone())].into_iter().collect();
        assert_eq!(
            decode(&coded, &pool, &coded.components[1]).unwrap().payload,
            long.payload
        );
    }
}
