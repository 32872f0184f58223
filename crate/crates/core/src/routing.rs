//! Converged shortest-path forwarding state, plus copies of every neighbor's table.
//!
//! Routes are minimum-hop with ties broken toward the lowest next-hop id, which is the
//! fixed point a distance-vector protocol settles on in a static topology.

use std::collections::{BTreeMap, VecDeque};

use crate::error::RoutingError;
use crate::model::NodeId;
use crate::phy::Topology;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ForwardingTables {
    /// `own[n][dst]`: next hop of `n` toward `dst`, `None` when unreachable or `n == dst`.
    own: Vec<Vec<Option<NodeId>>>,
    /// `hops[n][dst]`: hop count, `None` when unreachable.
    hops: Vec<Vec<Option<u32>>>,
    /// Tables each node received from its neighbors at setup.
    neighbor_copies: Vec<BTreeMap<NodeId, Vec<Option<NodeId>>>>,
}

/// Approximate size of one table entry exchanged with neighbors (dst + next hop + metric).
const TABLE_ENTRY_BYTES: u64 = 12;

pub fn build_forwarding_tables(topo: &Topology) -> ForwardingTables {
    let n = topo.len();
    let mut own = vec![vec![None; n]; n];
    let mut hops = vec![vec![None; n]; n];
    for dst in topo.nodes() {
        let dist = bfs(topo, dst);
        for node in topo.nodes() {
            hops[node.index()][dst.index()] = dist[node.index()];
            if node == dst {
                continue;
            }
            let Some(d) = dist[node.index()] else { continue };
            own[node.index()][dst.index()] = topo
                .nbrs(node)
                .iter()
                .copied()
                .find(|m| dist[m.index()] == Some(d - 1));
        }
    }
    let neighbor_copies = topo
        .nodes()
        .map(|node| {
            topo.nbrs(node)
                .iter()
                .map(|&m| (m, own[m.index()].clone()))
                .collect()
        })
        .collect();
    ForwardingTables {
        own,
        hops,
        neighbor_copies,
    }
}

fn bfs(topo: &Topology, root: NodeId) -> Vec<Option<u32>> {
    let mut dist = vec![None; topo.len()];
    dist[root.index()] = Some(0);
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u.index()].unwrap();
        for &v in topo.nbrs(u) {
            if dist[v.index()].is_none() {
                dist[v.index()] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

impl ForwardingTables {
    pub fn node_count(&self) -> usize {
        self.own.len()
    }

    pub fn next_hop(&self, n: NodeId, dst: NodeId) -> Result<NodeId, RoutingError> {
        self.own
            .get(n.index())
            .and_then(|row| row.get(dst.index()))
            .copied()
            .flatten()
            .ok_or(RoutingError::MissingEntry { at: n, dst })
    }

    pub fn hop_count(&self, n: NodeId, dst: NodeId) -> Option<u32> {
        self.hops.get(n.index())?.get(dst.index()).copied().flatten()
    }

    /// Next hop of neighbor `m` toward `dst`, answered from `n`'s copy of `m`'s table.
    pub fn neighbor_next_hop(&self, n: NodeId, m: NodeId, dst: NodeId) -> Result<NodeId, RoutingError> {
        let table = self
            .neighbor_copies
            .get(n.index())
            .and_then(|copies| copies.get(&m))
            .ok_or(RoutingError::NotANeighbor { holder: n, of: m })?;
        table
            .get(dst.index())
            .copied()
            .flatten()
            .ok_or(RoutingError::MissingEntry { at: m, dst })
    }

    /// Hop after the next one; `dst` itself when fewer than two hops remain.
    pub fn second_next_hop(&self, n: NodeId, dst: NodeId) -> Result<NodeId, RoutingError> {
        let first = self.next_hop(n, dst)?;
        self.onward_hop(first, dst)
    }

    /// Where `via` forwards toward `dst`, or `dst` if `via` is the destination.
    pub fn onward_hop(&self, via: NodeId, dst: NodeId) -> Result<NodeId, RoutingError> {
        if via == dst {
            Ok(dst)
        } else {
            self.next_hop(via, dst)
        }
    }

    pub fn ensure_route(&self, from: NodeId, to: NodeId) -> Result<(), RoutingError> {
        match self.hop_count(from, to) {
            Some(h) if h > 0 => Ok(()),
            _ => Err(RoutingError::Unreachable { from, to }),
        }
    }

    /// Bytes a node would exchange to hold all of its neighbors' tables. Not charged as airtime.
    pub fn table_bytes_exchanged(&self) -> u64 {
        self.neighbor_copies
            .iter()
            .map(|copies| {
                copies
                    .values()
                    .map(|t| t.iter().filter(|e| e.is_some()).count() as u64 * TABLE_ENTRY_BYTES)
                    .sum::<u64>()
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eight_node() -> Topology {
        let mut pos: Vec<(f64, f64)> = (0..5).map(|i| (150.0 * i as f64, 0.0)).collect();
        pos.extend((1..4).map(|i| (150.0 * i as f64, 150.0)));
        Topology::new(pos, 250.0).unwrap()
    }

    fn grid5() -> Topology {
        let pos = (0..25)
            .map(|i| (150.0 * (i % 5) as f64, 150.0 * (i / 5) as f64))
            .collect();
        Topology::new(pos, 250.0).unwrap()
    }

    #[test]
    fn eight_node_route_n0_to_n4() {
        let t = build_forwarding_tables(&eight_node());
        let mut path = vec![NodeId(0)];
        while *path.last().unwrap() != NodeId(4) {
            path.push(t.next_hop(*path.last().unwrap(), NodeId(4)).unwrap());
        }
        assert_eq!(path, [0, 1, 2, 3, 4].map(NodeId));
        assert_eq!(t.next_hop(NodeId(1), NodeId(4)).unwrap(), NodeId(2));
        assert_eq!(t.next_hop(NodeId(3), NodeId(4)).unwrap(), NodeId(4));
        assert_eq!(t.next_hop(NodeId(6), NodeId(4)).unwrap(), NodeId(3));
    }

    #[test]
    fn self_route_has_no_entry() {
        let t = build_forwarding_tables(&eight_node());
        assert!(t.next_hop(NodeId(2), NodeId(2)).is_err());
        assert!(t.ensure_route(NodeId(2), NodeId(2)).is_err());
    }

    #[test]
    fn neighbor_tables() {
        let t = build_forwarding_tables(&eight_node());
        assert_eq!(
            t.neighbor_next_hop(NodeId(6), NodeId(2), NodeId(4)).unwrap(),
            NodeId(3)
        );
        assert_eq!(
            t.neighbor_next_hop(NodeId(5), NodeId(1), NodeId(4)).unwrap(),
            NodeId(2)
        );
        assert_eq!(
            t.neighbor_next_hop(NodeId(0), NodeId(2), NodeId(4)).unwrap_err(),
            RoutingError::NotANeighbor {
                holder: NodeId(0),
                of: NodeId(2)
            }
        );
        assert!(t.neighbor_next_hop(NodeId(1), NodeId(0), NodeId(0)).is_err());
    }

    #[test]
    fn second_next_hops() {
        let t = build_forwarding_tables(&eight_node());
        assert_eq!(t.second_next_hop(NodeId(0), NodeId(4)).unwrap(), NodeId(2));
        assert_eq!(t.second_next_hop(NodeId(1), NodeId(4)).unwrap(), NodeId(3));
        assert_eq!(t.second_next_hop(NodeId(3), NodeId(4)).unwrap(), NodeId(4));
    }

    #[test]
    fn grid_corner_route() {
        let t = build_forwarding_tables(&grid5());
        // (0,0) -> (4,0): ids 0 -> 4.
        assert_eq!(t.next_hop(NodeId(0), NodeId(4)).unwrap(), NodeId(1));
        assert_eq!(t.hop_count(NodeId(0), NodeId(4)), Some(4));
    }

    #[test]
    fn disconnected_is_unreachable() {
        let topo = Topology::new(vec![(0.0, 0.0), (1000.0, 0.0)], 250.0).unwrap();
        let t = build_forwarding_tables(&topo);
        assert_eq!(
            t.ensure_route(NodeId(0), NodeId(1)).unwrap_err(),
            RoutingError::Unreachable {
                from: NodeId(0),
                to: NodeId(1)
            }
        );
    }
}
