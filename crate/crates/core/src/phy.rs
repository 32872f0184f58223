//! Geometry, neighbor derivation and the bit-error-driven reception model.

use std::collections::BTreeSet;

use rand::Rng;

use crate::error::TopologyError;
use crate::model::{Frame, NodeId};

pub const DEFAULT_RANGE_M: f64 = 250.0;
pub const DEFAULT_DATA_RATE_BPS: u64 = 1_000_000;

/// Static node placement on a unit-disk radio graph.
#[derive(Clone, Debug)]
pub struct Topology {
    positions: Vec<(f64, f64)>,
    range: f64,
    neighbors: Vec<Vec<NodeId>>,
}

impl Topology {
    /// Node `i` of `positions` gets id `i`.
    pub fn new(positions: Vec<(f64, f64)>, range: f64) -> Result<Self, TopologyError> {
        if !range.is_finite() || range <= 0.0 {
            return Err(TopologyError::BadRange);
        }
        let n = positions.len();
        let mut neighbors = vec![Vec::new(); n];
        for a in 0..n {
            for b in 0..n {
                if a != b && distance(positions[a], positions[b]) <= range {
                    neighbors[a].push(NodeId(b as u32));
                }
            }
        }
        Ok(Self {
            positions,
            range,
            neighbors,
        })
    }

    /// Builds from explicit `(id, x, y)` triples; ids must cover `0..n` exactly.
    pub fn from_placements(placements: &[(NodeId, f64, f64)], range: f64) -> Result<Self, TopologyError> {
        let n = placements.len();
        let mut slots: Vec<Option<(f64, f64)>> = vec![None; n];
        for &(id, x, y) in placements {
            let slot = slots
                .get_mut(id.index())
                .ok_or(TopologyError::NonContiguous { count: n, found: id })?;
            if slot.is_some() {
                return Err(TopologyError::DuplicateNode(id));
            }
            *slot = Some((x, y));
        }
        Self::new(slots.into_iter().map(|s| s.unwrap()).collect(), range)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.positions.len() as u32).map(NodeId)
    }

    pub fn contains(&self, n: NodeId) -> bool {
        n.index() < self.positions.len()
    }

    pub fn position(&self, n: NodeId) -> Result<(f64, f64), TopologyError> {
        self.positions
            .get(n.index())
            .copied()
            .ok_or(TopologyError::UnknownNode(n))
    }

    pub fn distance(&self, a: NodeId, b: NodeId) -> Result<f64, TopologyError> {
        Ok(distance(self.position(a)?, self.position(b)?))
    }

    /// Every other node within transmission range, ascending.
    pub fn neighbors(&self, n: NodeId) -> Result<&[NodeId], TopologyError> {
        self.neighbors
            .get(n.index())
            .map(Vec::as_slice)
            .ok_or(TopologyError::UnknownNode(n))
    }

    /// Panics on unknown ids; for callers that already validated them.
    pub fn nbrs(&self, n: NodeId) -> &[NodeId] {
        &self.neighbors[n.index()]
    }

    pub fn is_neighbor(&self, a: NodeId, b: NodeId) -> bool {
        self.neighbors
            .get(a.index())
            .is_some_and(|ns| ns.binary_search(&b).is_ok())
    }

    /// Nodes other than `n` within `radius` meters, ascending.
    pub fn within(&self, n: NodeId, radius: f64) -> Vec<NodeId> {
        let p = self.positions[n.index()];
        self.nodes()
            .filter(|&m| m != n && distance(p, self.positions[m.index()]) <= radius)
            .collect()
    }
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelParams {
    pub ber: f64,
    pub data_rate_bps: u64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            ber: 0.0,
            data_rate_bps: DEFAULT_DATA_RATE_BPS,
        }
    }
}

impl ChannelParams {
    pub fn with_ber(ber: f64) -> Self {
        Self {
            ber,
            ..Self::default()
        }
    }
}

/// Probability that a frame of `bits` suffers at least one independent bit error.
pub fn frame_loss_probability(ber: f64, bits: u64) -> f64 {
    if ber <= 0.0 {
        return 0.0;
    }
    // 1 - (1-ber)^bits, computed without cancellation for tiny ber.
    -f64::exp_m1(bits as f64 * f64::ln_1p(-ber))
}

/// Neighbors of the frame's sender that receive it error-free.
///
/// One uniform draw per neighbor, in ascending id order.
pub fn sample_reception<R: Rng + ?Sized>(
    frame: &Frame,
    topo: &Topology,
    params: &ChannelParams,
    rng: &mut R,
) -> BTreeSet<NodeId> {
    sample_reception_bits(frame.sender, frame.bits, topo, params, rng)
}

pub(crate) fn sample_reception_bits<R: Rng + ?Sized>(
    sender: NodeId,
    bits: u64,
    topo: &Topology,
    params: &ChannelParams,
    rng: &mut R,
) -> BTreeSet<NodeId> {
    let p_ok = 1.0 - frame_loss_probability(params.ber, bits);
    topo.nbrs(sender)
        .iter()
        .copied()
        .filter(|_| rng.gen::<f64>() < p_ok)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Ack, PayloadId};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn eight_node() -> Topology {
        let mut pos: Vec<(f64, f64)> = (0..5).map(|i| (150.0 * i as f64, 0.0)).collect();
        pos.extend((1..4).map(|i| (150.0 * i as f64, 150.0)));
        Topology::new(pos, 250.0).unwrap()
    }

    #[test]
    fn eight_node_neighbors() {
        let t = eight_node();
        assert_eq!(
            t.neighbors(NodeId(1)).unwrap(),
            &[NodeId(0), NodeId(2), NodeId(5), NodeId(6)]
        );
        assert_eq!(t.neighbors(NodeId(0)).unwrap(), &[NodeId(1), NodeId(5)]);
        assert!(t.neighbors(NodeId(8)).is_err());
    }

    #[test]
    fn neighbors_brute_force_and_symmetric() {
        let t = eight_node();
        for a in t.nodes() {
            for b in t.nodes() {
                let (pa, pb) = (t.position(a).unwrap(), t.position(b).unwrap());
                let close = a != b && ((pa.0 - pb.0).powi(2) + (pa.1 - pb.1).powi(2)) <= 250.0 * 250.0;
                assert_eq!(t.is_neighbor(a, b), close);
                assert_eq!(t.is_neighbor(a, b), t.is_neighbor(b, a));
            }
        }
    }

    #[test]
    fn single_node_has_no_neighbors() {
        let t = Topology::new(vec![(0.0, 0.0)], 250.0).unwrap();
        assert!(t.neighbors(NodeId(0)).unwrap().is_empty());
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(Topology::new(vec![], 0.0).unwrap_err(), TopologyError::BadRange);
        let dup = [(NodeId(0), 0.0, 0.0), (NodeId(0), 1.0, 1.0)];
        assert_eq!(
            Topology::from_placements(&dup, 250.0).unwrap_err(),
            TopologyError::DuplicateNode(NodeId(0))
        );
        let gap = [(NodeId(0), 0.0, 0.0), (NodeId(2), 1.0, 1.0)];
        assert!(matches!(
            Topology::from_placements(&gap, 250.0),
            Err(TopologyError::NonContiguous { .. })
        ));
    }

    #[test]
    fn loss_probability_values() {
        assert_eq!(frame_loss_probability(0.0, 8320), 0.0);
        // Oracle values from 1-(1-ber)^bits evaluated in 50-digit arithmetic.
        assert!((frame_loss_probability(2e-4, 8320) - 0.810_651_6).abs() < 1e-6);
        assert!((frame_loss_probability(2e-6, 8320) - 0.016_502_3).abs() < 1e-6);
    }

    fn ack_from(n: u32) -> Frame {
        Frame::ack(
            Ack {
                ack_sender: NodeId(n),
                payload: PayloadId::new(0, 0),
            },
            vec![],
        )
    }

    #[test]
    fn zero_ber_reaches_all_neighbors() {
        let t = eight_node();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let got = sample_reception(&ack_from(1), &t, &ChannelParams::default(), &mut rng);
        let want: BTreeSet<_> = t.nbrs(NodeId(1)).iter().copied().collect();
        assert_eq!(got, want);
    }

    #[test]
    fn fixed_seed_is_repeatable() {
        let t = eight_node();
        let params = ChannelParams::with_ber(2e-3);
        let a = sample_reception(&ack_from(6), &t, &params, &mut ChaCha8Rng::seed_from_u64(77));
        let b = sample_reception(&ack_from(6), &t, &params, &mut ChaCha8Rng::seed_from_u64(77));
        assert_eq!(a, b);
    }

    #[test]
    fn empirical_rate_within_three_sigma() {
        let t = eight_node();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for &(ber, bits) in &[(0.999, 1u64), (2e-4, 8320), (5e-3, 112)] {
            let params = ChannelParams::with_ber(ber);
            let p = 1.0 - frame_loss_probability(ber, bits);
            let trials = 100_000;
            let mut hits = 0u64;
            for _ in 0..trials {
                let got = sample_reception_bits(NodeId(0), bits, &t, &params, &mut rng);
                assert!(got.iter().all(|n| t.is_neighbor(NodeId(0), *n)));
                hits += got.contains(&NodeId(1)) as u64;
            }
            let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
            let dev = (hits as f64 - trials as f64 * p).abs();
            assert!(
                dev <= 3.0 * sigma.max(1.0),
                "ber {ber}: {hits} vs {}",
                trials as f64 * p
            );
        }
    }
}
