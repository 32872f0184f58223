use std::time::Duration;

use crate::model::{FlowId, NodeId};
use crate::node::NodeCounters;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlowMetrics {
    pub flow: FlowId,
    pub src: NodeId,
    pub dst: NodeId,
    pub generated: u64,
    pub generated_bytes: u64,
    pub delivered: u64,
    pub delivered_bytes: u64,
    /// Deliveries of an already-delivered payload. The delivered-set guard keeps this at 0.
    pub duplicate_deliveries: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Metrics {
    pub flows: Vec<FlowMetrics>,
    /// Data frames put on air, native or coded.
    pub tx_total: u64,
    pub tx_coded: u64,
    pub retransmissions: u64,
    pub duplicates_suppressed: u64,
    pub helper_forwards: u64,
    pub helper_cancelled: u64,
    pub acks_sent: u64,
    pub reports_sent: u64,
    pub drops_queue: u64,
    pub drops_retry: u64,
    pub drops_undecodable: u64,
    pub drops_malformed: u64,
    /// Receptions destroyed by overlapping transmissions.
    pub collisions: u64,
    pub acks_skipped: u64,
    /// Helper ACKs withdrawn because the packet was superseded while the ACK waited for the medium.
    pub helper_acks_stale: u64,
    /// Packets still queued or awaiting an ACK when the run stopped.
    pub backlog_at_end: u64,
    pub table_bytes: u64,
    pub events: u64,
    pub duration: Duration,
}

impl Metrics {
    pub fn add_node(&mut self, c: &NodeCounters) {
        self.tx_total += c.tx_data;
        self.tx_coded += c.tx_coded;
        self.retransmissions += c.retransmissions;
        self.duplicates_suppressed += c.duplicates_suppressed;
        self.helper_forwards += c.helper_forwards;
        self.helper_cancelled += c.helper_cancelled;
        self.drops_queue += c.queue_drops;
        self.drops_retry += c.retry_drops;
        self.drops_undecodable += c.undecodable;
        self.drops_malformed += c.malformed;
        self.reports_sent += c.reports_sent;
    }

    pub fn delivered_bytes(&self) -> u64 {
        self.flows.iter().map(|f| f.delivered_bytes).sum()
    }

    pub fn duplicate_deliveries(&self) -> u64 {
        self.flows.iter().map(|f| f.duplicate_deliveries).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Throughput {
    pub per_flow: Vec<f64>,
    pub aggregate: f64,
}

/// Delivered payload bits per second over `duration`.
pub fn throughput(metrics: &Metrics, duration: Duration) -> Throughput {
    let secs = duration.as_secs_f64();
    assert!(secs > 0.0, "throughput needs a positive duration");
    let per_flow: Vec<f64> = metrics
        .flows
        .iter()
        .map(|f| f.delivered_bytes as f64 * 8.0 / secs)
        .collect();
    let aggregate = per_flow.iter().sum();
    Throughput { per_flow, aggregate }
}
