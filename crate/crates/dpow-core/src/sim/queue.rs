//! Time-ordered event queue for the simulation.
//!
//! Events at identical timestamps pop in insertion order, which pins down
//! the schedule completely and keeps runs reproducible. Times are plain
//! `f64` seconds compared with `total_cmp`; producers never enqueue NaN.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// A message arrives at its destination.
    Deliver,
    /// A local deadline fires.
    Timer,
    /// A batch of hashing work completes.
    HashBatch,
}

#[derive(Debug, Clone)]
pub struct SimEvent<P> {
    pub time: f64,
    pub kind: EventKind,
    pub payload: P,
}

struct Entry<P> {
    time: f64,
    seq: u64,
    kind: EventKind,
    payload: P,
}

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.time.total_cmp(&other.time).is_eq() && self.seq == other.seq
    }
}
impl<P> Eq for Entry<P> {}

impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for Entry<P> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.time.total_cmp(&other.time).then(self.seq.cmp(&other.seq))
    }
}

pub struct EventQueue<P> {
    heap: BinaryHeap<Reverse<Entry<P>>>,
    next_seq: u64,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        EventQueue { heap: BinaryHeap::new(), next_seq: 0 }
    }

    pub fn push(&mut self, time: f64, kind: EventKind, payload: P) {
        debug_assert!(!time.is_nan(), "event time must not be NaN");
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Entry { time, seq, kind, payload }));
    }

    pub fn pop(&mut self) -> Option<SimEvent<P>> {
        self.heap.pop().map(|Reverse(e)| SimEvent {
            time: e.time,
            kind: e.kind,
            payload: e.payload,
        })
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|Reverse(e)| e.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pops_in_time_order() {
        let mut q = EventQueue::new();
        q.push(3.0, EventKind::Timer, "c");
        q.push(1.0, EventKind::Deliver, "a");
        q.push(2.0, EventKind::HashBatch, "b");
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).map(|e| e.payload).collect();
        assert_eq!(order, ["a", "b", "c"]);
    }

    #[test]
    fn ties_pop_in_insertion_order() {
        let mut q = EventQueue::new();
        for i in 0..100u32 {
            q.push(1.5, EventKind::Timer, i);
        }
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).map(|e| e.payload).collect();
        assert_eq!(order, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn interleaved_pushes_keep_order() {
        let mut q = EventQueue::new();
        q.push(5.0, EventKind::Timer, 50);
        q.push(1.0, EventKind::Timer, 10);
        assert_eq!(q.pop().unwrap().payload, 10);
        q.push(2.0, EventKind::Timer, 20);
        q.push(0.5, EventKind::Timer, 5);
        assert_eq!(q.pop().unwrap().payload, 5);
        assert_eq!(q.pop().unwrap().payload, 20);
        assert_eq!(q.pop().unwrap().payload, 50);
        assert!(q.pop().is_none());
        assert!(q.is_empty());
    }

    #[test]
    fn peek_time_matches_next_pop() {
        let mut q = EventQueue::new();
        assert_eq!(q.peek_time(), None);
        q.push(2.25, EventKind::Deliver, ());
        q.push(1.75, EventKind::Deliver, ());
        assert_eq!(q.peek_time(), Some(1.75));
        q.pop();
        assert_eq!(q.peek_time(), Some(2.25));
        assert_eq!(q.len(), 1);
    }
}
