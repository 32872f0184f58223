//! Flat `key = value` scenario files.
//!
//! ```text
//! # eight-node BER sweep
//! topology = eight_node
//! protocols = plain, cope, bend, flexonc
//! bers = 2e-6, 2e-5, 5e-5, 8e-5, 1e-4, 2e-4
//! seeds = 1-5
//! flow = 0,4,0.07,150
//! flow = 4,0,0.07,150
//! ```
//!
//! `flow = src,dst,interval_s,duration_s[,start_s]` and `node = x,y` may repeat. Omitted keys
//! take the defaults below; omitting every `flow` line selects the topology's default flows.

use std::time::Duration;

use crate::coding::Protocol;
use crate::error::ConfigError;
use crate::model::NodeId;
use crate::node::NodeParams;
use crate::phy::{Topology, DEFAULT_DATA_RATE_BPS, DEFAULT_RANGE_M};
use crate::routing::build_forwarding_tables;
use crate::scenario::topology::{check_eight_node, default_flows, positions, TopologyKind};
use crate::sim::{FlowSpec, MacParams, Scenario, DEFAULT_PAYLOAD_BYTES};

pub const DEFAULT_BERS: [f64; 6] = [2e-6, 2e-5, 5e-5, 8e-5, 1e-4, 2e-4];
pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    /// Label written into every CSV row.
    pub name: String,
    pub topology: TopologyKind,
    pub range: f64,
    pub protocols: Vec<Protocol>,
    pub bers: Vec<f64>,
    pub seeds: Vec<u64>,
    pub flows: Vec<FlowSpec>,
    pub payload_bytes: usize,
    pub data_rate_bps: u64,
    pub drain: Duration,
    pub node: NodeParams,
    pub mac: MacParams,
}

impl ScenarioConfig {
    /// Built-in scenario with its default flows, all protocols, the standard BER set and seeds.
    pub fn builtin(kind: TopologyKind) -> Self {
        Self {
            name: kind.name().to_string(),
            flows: default_flows(&kind),
            topology: kind,
            range: DEFAULT_RANGE_M,
            protocols: Protocol::ALL.to_vec(),
            bers: DEFAULT_BERS.to_vec(),
            seeds: DEFAULT_SEEDS.to_vec(),
            payload_bytes: DEFAULT_PAYLOAD_BYTES,
            data_rate_bps: DEFAULT_DATA_RATE_BPS,
            drain: Duration::from_secs(1),
            node: NodeParams::default(),
            mac: MacParams::default(),
        }
    }

    pub fn topology(&self) -> Result<Topology, ConfigError> {
        Topology::new(positions(&self.topology), self.range).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// One simulation cell of this configuration.
    pub fn scenario(&self, protocol: Protocol, ber: f64) -> Result<Scenario, ConfigError> {
        let mut sc = Scenario::new(self.topology()?, self.flows.clone(), protocol, ber);
        sc.payload_bytes = self.payload_bytes;
        sc.data_rate_bps = self.data_rate_bps;
        sc.drain = self.drain;
        sc.node = self.node.clone();
        sc.mac = self.mac.clone();
        Ok(sc)
    }

    /// Checks every invariant a sweep relies on: endpoints exist and are connected, BERs lie in
    /// [0, 1), lists are nonempty, and the eight-node layout reproduces its adjacency facts.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        let topo = self.topology()?;
        if self.topology == TopologyKind::EightNode {
            check_eight_node(&topo).map_err(ConfigError::Invalid)?;
        }
        if self.protocols.is_empty() {
            return invalid("no protocols".into());
        }
        if self.bers.is_empty() {
            return invalid("no bers".into());
        }
        if self.seeds.is_empty() {
            return invalid("no seeds".into());
        }
        if let Some(b) = self.bers.iter().find(|b| !(0.0..1.0).contains(*b)) {
            return invalid(format!("ber {b} outside [0, 1)"));
        }
        if self.flows.is_empty() {
            return invalid("no flows".into());
        }
        if self.payload_bytes == 0 || self.data_rate_bps == 0 {
            return invalid("payload size and data rate must be positive".into());
        }
        let tables = build_forwarding_tables(&topo);
        for (i, f) in self.flows.iter().enumerate() {
            for n in [f.src, f.dst] {
                if n.index() >= topo.len() {
                    return invalid(format!("flow {i}: node {n} does not exist"));
                }
            }
            if f.src == f.dst {
                return invalid(format!("flow {i}: source and destination are both {}", f.src));
            }
            if f.interval.is_zero() {
                return invalid(format!("flow {i}: interval must be positive"));
            }
            tables
                .ensure_route(f.src, f.dst)
                .map_err(|e| ConfigError::Invalid(format!("flow {i}: {e}")))?;
        }
        Ok(())
    }
}

/// Parses and validates a configuration file.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let mut topology = None;
    let mut name = None;
    let mut nodes: Vec<(f64, f64)> = Vec::new();
    let mut flows: Vec<FlowSpec> = Vec::new();
    let mut set: Vec<(usize, String, String)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::Syntax {
                line,
                msg: format!("expected `key = value`, found `{content}`"),
            });
        };
        let (key, value) = (key.trim().to_ascii_lowercase(), value.trim().to_string());
        let bad = |msg: String| ConfigError::BadValue {
            line,
            key: key.clone(),
            msg,
        };
        match key.as_str() {
            "topology" => topology = Some(value.parse::<TopologyKind>().map_err(bad)?),
            "name" => name = Some(value),
            "node" => {
                let v = floats(&value).map_err(bad)?;
                let [x, y] = v[..] else {
                    return Err(bad("expected `x,y`".into()));
                };
                nodes.push((x, y));
            }
            "flow" => flows.push(parse_flow(&value).map_err(bad)?),
            _ => set.push((line, key, value)),
        }
    }

    let kind = match topology {
        Some(TopologyKind::Explicit(_)) | None if !nodes.is_empty() => TopologyKind::Explicit(nodes),
        Some(TopologyKind::Explicit(_)) => {
            return Err(ConfigError::Invalid(
                "explicit topology needs `node = x,y` lines".into(),
            ))
        }
        Some(k) => {
            if !nodes.is_empty() {
                return Err(ConfigError::Invalid(format!(
                    "`node` lines conflict with topology {k}"
                )));
            }
            k
        }
        None => return Err(ConfigError::Invalid("missing `topology`".into())),
    };
    let mut cfg = ScenarioConfig::builtin(kind);
    if let Some(n) = name {
        cfg.name = n;
    }
    if !flows.is_empty() {
        cfg.flows = flows;
    }
    for (line, key, value) in set {
        apply(&mut cfg, &key, &value).map_err(|e| match e {
            Apply::Unknown => ConfigError::UnknownKey {
                line,
                key: key.clone(),
            },
            Apply::Bad(msg) => ConfigError::BadValue {
                line,
                key: key.clone(),
                msg,
            },
        })?;
    }
    cfg.validate()?;
    Ok(cfg)
}

enum Apply {
    Unknown,
    Bad(String),
}

fn apply(cfg: &mut ScenarioConfig, key: &str, value: &str) -> Result<(), Apply> {
    let int = || value.parse::<u64>().map_err(|e| Apply::Bad(e.to_string()));
    let num = || {
        value
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite() && *v >= 0.0)
            .ok_or_else(|| Apply::Bad(format!("`{value}` is not a non-negative number")))
    };
    let ms = || num().map(|v| Duration::from_secs_f64(v / 1e3));
    let us = || num().map(|v| Duration::from_secs_f64(v / 1e6));
    match key {
        "range" => cfg.range = num()?,
        "protocol" | "protocols" => {
            cfg.protocols = list(value)
                .map(|s| s.parse::<Protocol>())
                .collect::<Result<_, _>>()
                .map_err(Apply::Bad)?
        }
        "ber" | "bers" => {
            let bers = floats(value).map_err(Apply::Bad)?;
            if let Some(b) = bers.iter().find(|b| !(0.0..1.0).contains(*b)) {
                return Err(Apply::Bad(format!("ber {b} outside [0, 1)")));
            }
            cfg.bers = bers;
        }
        "seed" | "seeds" => cfg.seeds = parse_seeds(value).map_err(Apply::Bad)?,
        "payload_bytes" => cfg.payload_bytes = int()? as usize,
        "data_rate_bps" => cfg.data_rate_bps = int()?,
        "drain_s" => cfg.drain = Duration::from_secs_f64(num()?),
        "queue_cap" => cfg.node.queue_cap = int()? as usize,
        "ack_cache_cap" => cfg.node.ack_cache_cap = int()? as usize,
        "pool_cap" => cfg.node.pool_cap = int()? as usize,
        "pool_lifetime_ms" => cfg.node.pool_lifetime = ms()?,
        "retry_limit" => cfg.node.retry_limit = int()? as u32,
        "coding_hold_ms" => cfg.node.coding_hold = ms()?,
        "remix_retransmissions" => {
            cfg.node.remix_retransmissions = value
                .parse()
                .map_err(|_| Apply::Bad("expected true or false".into()))?
        }
        "ack_slot_ms" => cfg.node.timers.ack_slot = ms()?,
        "base_timeout_ms" => cfg.node.timers.base_timeout = ms()?,
        "slot_us" => cfg.mac.slot = us()?,
        "cw" => cfg.mac.cw = (int()? as u32).max(1),
        "difs_us" => cfg.mac.difs = us()?,
        "pifs_us" => cfg.mac.pifs = us()?,
        "sifs_us" => cfg.mac.sifs = us()?,
        "carrier_sense_m" => cfg.mac.carrier_sense_range = num()?,
        _ => return Err(Apply::Unknown),
    }
    Ok(())
}

fn list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn floats(value: &str) -> Result<Vec<f64>, String> {
    list(value)
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("`{s}` is not a number"))
        })
        .collect()
}

/// `1, 2, 7` or ranges such as `1-5`.
fn parse_seeds(value: &str) -> Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for part in list(value) {
        let num = |s: &str| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| format!("`{s}` is not a seed"))
        };
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(format!("empty seed range `{part}`"));
                }
                out.extend(a..=b);
            }
            None => out.push(num(part)?),
        }
    }
    if out.is_empty() {
        return Err("no seeds".into());
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn parse_flow(value: &str) -> Result<FlowSpec, String> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if !(4..=5).contains(&parts.len()) {
        return Err("expected `src,dst,interval_s,duration_s[,start_s]`".into());
    }
    let node = |s: &str| {
        s.parse::<u32>()
            .map(NodeId)
            .map_err(|_| format!("`{s}` is not a node id"))
    };
    let secs = |s: &str, what: &str| {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite() && *v >= 0.0)
            .ok_or_else(|| format!("{what} `{s}` is not a non-negative number"))
    };
    let interval = secs(parts[2], "interval")?;
    if interval == 0.0 {
        return Err("interval must be positive".into());
    }
    let mut flow = FlowSpec::new(
        node(parts[0])?,
        node(parts[1])?,
        interval,
        secs(parts[3], "duration")?,
    );
    if let Some(s) = parts.get(4) {
        flow = flow.starting_at(Duration::from_secs_f64(secs(s, "start")?));
    }
    Ok(flow)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg = parse_config("topology = eight_node\n").unwrap();
        assert_eq!(cfg.name, "eight_node");
        assert_eq!(cfg.protocols, Protocol::ALL.to_vec());
        assert_eq!(cfg.bers, DEFAULT_BERS.to_vec());
        assert_eq!(cfg.seeds, DEFAULT_SEEDS.to_vec());
        assert_eq!(cfg.flows, default_flows(&TopologyKind::EightNode));
        assert_eq!(cfg.node, NodeParams::default());
    }

    #[test]
    fn full_file_round_trips_values() {
        let text = "\
# grid override
name = g
topology = grid5
protocols = flexonc, plain
bers = 0, 1e-4
seeds = 3-5, 9
flow = 0,4,0.1,100
flow = 20,24,0.1,100,0.5
coding_hold_ms = 5
cw = 64
";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.name, "g");
        assert_eq!(cfg.protocols, vec![Protocol::FlexOnc, Protocol::Plain]);
        assert_eq!(cfg.bers, vec![0.0, 1e-4]);
        assert_eq!(cfg.seeds, vec![3, 4, 5, 9]);
        assert_eq!(cfg.flows.len(), 2);
        assert_eq!(cfg.flows[1].start, Duration::from_millis(500));
        assert_eq!(cfg.node.coding_hold, Duration::from_millis(5));
        assert_eq!(cfg.mac.cw, 64);
    }

    #[test]
    fn out_of_range_ber_names_the_field() {
        let err = parse_config("topology = x_topo\nber = 1.5\n").unwrap_err();
        match err {
            ConfigError::BadValue { line, key, msg } => {
                assert_eq!((line, key.as_str()), (2, "ber"));
                assert!(msg.contains("1.5"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn disconnected_flow_is_rejected() {
        let text = "node = 0,0\nnode = 100,0\nnode = 1000,0\nflow = 0,2,0.1,1\n";
        let err = parse_config(text).unwrap_err();
        assert!(
            matches!(err, ConfigError::Invalid(ref m) if m.contains("no route")),
            "{err}"
        );
    }

    #[test]
    fn explicit_nodes_build_a_topology() {
        let cfg = parse_config("node = 0,0\nnode = 200,0\nflow = 0,1,0.5,2\n").unwrap();
        assert_eq!(cfg.topology().unwrap().len(), 2);
        assert_eq!(cfg.name, "explicit");
    }

    #[test]
    fn line_numbered_errors() {
        assert_eq!(
            parse_config("topology = grid5\n\nfrobnicate = 3\n").unwrap_err(),
            ConfigError::UnknownKey {
                line: 3,
                key: "frobnicate".into()
            }
        );
        assert!(matches!(
            parse_config("topology = grid5\njunk\n").unwrap_err(),
            ConfigError::Syntax { line: 2, .. }
        ));
        assert!(matches!(
            parse_config("topology = grid5\nflow = 0,4\n").unwrap_err(),
            ConfigError::BadValue { line: 2, .. }
        ));
        assert!(matches!(
            parse_config("seeds = 1\n").unwrap_err(),
            ConfigError::Invalid(_)
        ));
        assert!(matches!(
            parse_config("topology = grid5\nflow = 0,99,0.1,1\n").unwrap_err(),
            ConfigError::Invalid(_)
        ));
    }

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seeds("5-7, 1").unwrap(), vec![1, 5, 6, 7]);
        assert!(parse_seeds("7-5").is_err());
        assert!(parse_seeds("x").is_err());
    }
}
