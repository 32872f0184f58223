use std::time::Duration;

use crate::model::NodeId;

/// Constant-bit-rate flow: a datagram at `start + k * interval` for every `k * interval < duration`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSpec {
    pub src: NodeId,
    pub dst: NodeId,
    pub interval: Duration,
    pub duration: Duration,
    pub start: Duration,
}

impl FlowSpec {
    pub fn new(src: NodeId, dst: NodeId, interval_s: f64, duration_s: f64) -> Self {
        Self {
            src,
            dst,
            interval: Duration::from_secs_f64(interval_s),
            duration: Duration::from_secs_f64(duration_s),
            start: Duration::ZERO,
        }
    }

    pub fn starting_at(mut self, start: Duration) -> Self {
        self.start = start;
        self
    }

    pub fn end(&self) -> Duration {
        self.start + self.duration
    }

    pub fn datagram_count(&self) -> u64 {
        cbr_source(self).count() as u64
    }
}

/// Emission times and sequence numbers of a CBR flow. Integer nanoseconds throughout.
pub fn cbr_source(flow: &FlowSpec) -> impl Iterator<Item = (Duration, u64)> + '_ {
    let step = flow.interval.as_nanos() as u64;
    assert!(step > 0, "CBR interval must be positive");
    let limit = flow.duration.as_nanos() as u64;
    (0u64..)
        .map(move |k| (k, k * step))
        .take_while(move |&(_, off)| off < limit)
        .map(move |(k, off)| (flow.start + Duration::from_nanos(off), k))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn datagram_counts() {
        assert_eq!(
            FlowSpec::new(NodeId(0), NodeId(4), 0.07, 150.0).datagram_count(),
            2143
        );
        assert_eq!(
            FlowSpec::new(NodeId(0), NodeId(4), 0.1, 100.0).datagram_count(),
            1000
        );
        assert_eq!(FlowSpec::new(NodeId(0), NodeId(4), 0.5, 0.2).datagram_count(), 1);
        assert_eq!(FlowSpec::new(NodeId(0), NodeId(4), 0.5, 0.0).datagram_count(), 0);
    }

    #[test]
    fn times_are_offset_and_increasing() {
        let f = FlowSpec::new(NodeId(1), NodeId(2), 0.1, 0.35).starting_at(Duration::from_millis(10));
        let got: Vec<_> = cbr_source(&f).collect();
        let want: Vec<_> = [10, 110, 210, 310]
            .iter()
            .enumerate()
            .map(|(k, &ms)| (Duration::from_millis(ms), k as u64))
            .collect();
        assert_eq!(got, want);
    }
}
