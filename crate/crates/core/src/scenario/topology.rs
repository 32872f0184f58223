use std::fmt;
use std::str::FromStr;

use crate::model::NodeId;
use crate::phy::{Topology, DEFAULT_RANGE_M};
use crate::sim::FlowSpec;

pub const GRID_SIDE: u32 = 5;
pub const PITCH_M: f64 = 150.0;

#[derive(Clone, Debug, PartialEq)]
pub enum TopologyKind {
    /// Two crossing flows through one relay.
    XTopo,
    /// Five-node chain N0..N4 with N5..N7 above N1..N3.
    EightNode,
    /// 5 x 5 grid, id = row * 5 + col.
    Grid5,
    Explicit(Vec<(f64, f64)>),
}

impl TopologyKind {
    pub fn name(&self) -> &'static str {
        match self {
            TopologyKind::XTopo => "x_topo",
            TopologyKind::EightNode => "eight_node",
            TopologyKind::Grid5 => "grid5",
            TopologyKind::Explicit(_) => "explicit",
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TopologyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "x_topo" | "x" => Ok(TopologyKind::XTopo),
            "eight_node" | "8node" => Ok(TopologyKind::EightNode),
            "grid5" | "grid" => Ok(TopologyKind::Grid5),
            "explicit" => Ok(TopologyKind::Explicit(Vec::new())),
            other => Err(format!("unknown topology `{other}`")),
        }
    }
}

pub fn positions(kind: &TopologyKind) -> Vec<(f64, f64)> {
    match kind {
        // S1, S2, relay, D1, D2.
        TopologyKind::XTopo => vec![
            (0.0, 200.0),
            (300.0, 0.0),
            (150.0, 100.0),
            (300.0, 200.0),
            (0.0, 0.0),
        ],
        TopologyKind::EightNode => {
            let mut p: Vec<(f64, f64)> = (0..5).map(|i| (PITCH_M * i as f64, 0.0)).collect();
            p.extend((1..4).map(|i| (PITCH_M * i as f64, PITCH_M)));
            p
        }
        TopologyKind::Grid5 => (0..GRID_SIDE * GRID_SIDE)
            .map(|i| (PITCH_M * (i % GRID_SIDE) as f64, PITCH_M * (i / GRID_SIDE) as f64))
            .collect(),
        TopologyKind::Explicit(p) => p.clone(),
    }
}

pub fn build_topology(kind: &TopologyKind) -> Topology {
    Topology::new(positions(kind), DEFAULT_RANGE_M).expect("built-in layouts are valid")
}

pub fn grid_id(row: u32, col: u32) -> NodeId {
    NodeId(row * GRID_SIDE + col)
}

pub fn default_flows(kind: &TopologyKind) -> Vec<FlowSpec> {
    match kind {
        // The second source starts 10 ms later so the relay sees the pair in turn.
        TopologyKind::XTopo => vec![
            FlowSpec::new(NodeId(0), NodeId(3), 0.1, 10.0),
            FlowSpec::new(NodeId(1), NodeId(4), 0.1, 10.0).starting_at(std::time::Duration::from_millis(10)),
        ],
        TopologyKind::EightNode => vec![
            FlowSpec::new(NodeId(0), NodeId(4), 0.07, 150.0),
            FlowSpec::new(NodeId(4), NodeId(0), 0.07, 150.0),
        ],
        TopologyKind::Grid5 => {
            let last = GRID_SIDE - 1;
            let mut flows = Vec::new();
            for col in 0..4 {
                let (a, b) = (grid_id(0, col), grid_id(last, col));
                let (src, dst) = if col % 2 == 0 { (a, b) } else { (b, a) };
                flows.push(FlowSpec::new(src, dst, 0.1, 100.0));
            }
            for row in 0..4 {
                let (a, b) = (grid_id(row, 0), grid_id(row, last));
                let (src, dst) = if row % 2 == 0 { (a, b) } else { (b, a) };
                flows.push(FlowSpec::new(src, dst, 0.1, 100.0));
            }
            flows
        }
        TopologyKind::Explicit(_) => Vec::new(),
    }
}

/// The adjacency facts the eight-node layout must reproduce.
pub fn check_eight_node(topo: &Topology) -> Result<(), String> {
    let n = NodeId;
    let want_n1: Vec<NodeId> = [0, 2, 5, 6].map(n).to_vec();
    let got = topo.neighbors(n(1)).map_err(|e| e.to_string())?;
    if got != want_n1.as_slice() {
        return Err(format!("neighbors of N1 are {got:?}, expected N0, N2, N5, N6"));
    }
    let facts = [
        (6, 2, true, "N6 must neighbor N2"),
        (6, 3, true, "N6 must neighbor N3"),
        (5, 3, false, "N5 must not neighbor N3"),
        (0, 2, false, "N0 must not neighbor N2"),
    ];
    for (a, b, want, msg) in facts {
        if topo.is_neighbor(n(a), n(b)) != want {
            return Err(msg.to_string());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_node_layout_satisfies_adjacency_facts() {
        check_eight_node(&build_topology(&TopologyKind::EightNode)).unwrap();
        // Moving N5 next to N3 must be caught.
        let mut p = positions(&TopologyKind::EightNode);
        p[5] = (300.0, 150.0);
        let bad = Topology::new(p, DEFAULT_RANGE_M).unwrap();
        assert!(check_eight_node(&bad).is_err());
    }

    #[test]
    fn grid_corner_has_three_neighbors() {
        let t = build_topology(&TopologyKind::Grid5);
        assert_eq!(
            t.nbrs(grid_id(0, 0)),
            &[grid_id(0, 1), grid_id(1, 0), grid_id(1, 1)]
        );
        assert_eq!(t.nbrs(grid_id(2, 2)).len(), 8);
    }

    #[test]
    fn x_relay_hears_every_endpoint() {
        let t = build_topology(&TopologyKind::XTopo);
        assert_eq!(t.nbrs(NodeId(2)), &[0, 1, 3, 4].map(NodeId));
        // Sources out of each other's range; each destination overhears the opposite source.
        assert!(!t.is_neighbor(NodeId(0), NodeId(1)));
        assert!(t.is_neighbor(NodeId(3), NodeId(1)));
        assert!(t.is_neighbor(NodeId(4), NodeId(0)));
        assert!(!t.is_neighbor(NodeId(0), NodeId(3)));
        assert!(!t.is_neighbor(NodeId(1), NodeId(4)));
    }

    #[test]
    fn default_flow_shapes() {
        let x = default_flows(&TopologyKind::XTopo);
        assert_eq!(x.len(), 2);
        assert_eq!(
            (x[0].src, x[0].dst, x[1].src, x[1].dst),
            (NodeId(0), NodeId(3), NodeId(1), NodeId(4))
        );

        let e = default_flows(&TopologyKind::EightNode);
        assert_eq!(e.len(), 2);
        assert_eq!((e[0].src, e[0].dst), (NodeId(0), NodeId(4)));
        assert_eq!((e[1].src, e[1].dst), (NodeId(4), NodeId(0)));
        assert!(e
            .iter()
            .all(|f| f.interval.as_millis() == 70 && f.duration.as_secs() == 150));

        let g = default_flows(&TopologyKind::Grid5);
        assert_eq!(g.len(), 8);
        assert!(g
            .iter()
            .all(|f| f.interval.as_millis() == 100 && f.duration.as_secs() == 100));
        assert_eq!((g[0].src, g[0].dst), (grid_id(0, 0), grid_id(4, 0)));
        assert_eq!((g[1].src, g[1].dst), (grid_id(4, 1), grid_id(0, 1)));
        assert_eq!((g[5].src, g[5].dst), (grid_id(1, 4), grid_id(1, 0)));
    }
}
