use thiserror::Error;

use crate::model::{NodeId, PayloadId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("a coded packet needs at least two natives, got {0}")]
    TooFewComponents(usize),
    #[error("{first} and {second} share next hop {next_hop}")]
    DuplicateNextHop {
        next_hop: NodeId,
        first: PayloadId,
        second: PayloadId,
    },
    #[error("payload {0} appears twice")]
    DuplicatePayload(PayloadId),
    #[error("{0} is not a component of this coded packet")]
    NotAComponent(PayloadId),
    #[error("missing payload {0} needed to decode")]
    NotDecodable(PayloadId),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("duplicate node {0}")]
    DuplicateNode(NodeId),
    #[error("node ids must be 0..{count} without gaps, found {found}")]
    NonContiguous { count: usize, found: NodeId },
    #[error("transmission range must be positive")]
    BadRange,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RoutingError {
    #[error("no route from {from} to {to}")]
    Unreachable { from: NodeId, to: NodeId },
    #[error("{holder} holds no forwarding table for {of}: not a neighbor")]
    NotANeighbor { holder: NodeId, of: NodeId },
    #[error("no forwarding entry at {at} for destination {dst}")]
    MissingEntry { at: NodeId, dst: NodeId },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PriorityError {
    #[error("{receiver} is not in the priority list of {sender}'s frame")]
    NotInList { receiver: NodeId, sender: NodeId },
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("event limit of {limit} exceeded at t={at_secs:.6}s")]
    EventLimit { limit: u64, at_secs: f64 },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {msg}")]
    BadValue { line: usize, key: String, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("run {protocol} ber={ber} seed={seed} failed: {source}")]
    Run {
        protocol: String,
        ber: f64,
        seed: u64,
        #[source]
        source: SimError,
    },
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Error)]
pub enum ResultsError {
    #[error("{scenario}: no {protocol} result at ber={ber}")]
    MissingCell {
        scenario: String,
        protocol: String,
        ber: f64,
    },
    #[error("runs.csv row {row}: {msg}")]
    BadRow { row: usize, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
