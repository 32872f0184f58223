use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::time::Duration;

use crate::model::{NodeId, PayloadId};
use crate::node::NodeTimer;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EventKind {
    /// CBR source `flow` emits datagram `seq`.
    Traffic {
        flow: usize,
        seq: u64,
    },
    /// Transmission `tx` leaves the air; receivers are resolved now.
    FrameEnd {
        tx: u64,
    },
    /// Immediate ACK goes on air.
    AckStart {
        node: NodeId,
        payload: PayloadId,
    },
    /// Backoff (or PIFS wait) completes; `gen` guards against frozen attempts.
    MacGrant {
        node: NodeId,
        gen: u64,
    },
    Timer {
        node: NodeId,
        timer: NodeTimer,
    },
    /// A coding hold expires.
    Wake {
        node: NodeId,
    },
}

#[derive(Clone, Debug)]
pub struct Event {
    pub time: Duration,
    pub seq: u64,
    pub kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

/// Min-queue ordered by `(time, seq)`; `seq` follows scheduling order.
#[derive(Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: Duration, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Event { time, seq, kind }));
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop().map(|Reverse(e)| e)
    }

    pub fn peek_time(&self) -> Option<Duration> {
        self.heap.peek().map(|Reverse(e)| e.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
