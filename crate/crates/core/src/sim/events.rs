use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Simulated seconds since the start of a run.
pub type SimTime = f64;

/// Index of a program within a run (position in the sorted trace).
pub type ProgramId = usize;

/// Index of a request (one LLM turn) within a run.
pub type RequestId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// A tool call returned; the program's next turn reaches the engine.
    ToolCallComplete { program: ProgramId },
    /// A program's first turn reaches the engine.
    ProgramArrival { program: ProgramId },
    /// KV blocks of an admitted request finished loading from host memory.
    SwapInComplete { request: RequestId },
    /// A pin may have expired.
    PinExpiry { program: ProgramId, pin: u64 },
    /// The in-flight engine iteration finished.
    EngineIterationEnd { iteration: u64 },
}

impl EventKind {
    /// Tie-break rank at equal timestamps. Returning turns are visible to the
    /// scheduler before new admissions, and both before the iteration
    /// boundary at which the scheduler runs.
    pub fn rank(&self) -> u8 {
        match self {
            EventKind::ToolCallComplete { .. } => 0,
            EventKind::ProgramArrival { .. } => 1,
            EventKind::SwapInComplete { .. } => 2,
            EventKind::PinExpiry { .. } => 3,
            EventKind::EngineIterationEnd { .. } => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: SimTime,
    pub kind: EventKind,
    seq: u64,
}

impl Event {
    pub fn seq(&self) -> u64 {
        self.seq
    }
}

struct Queued(Event);

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert for earliest-first.
        other
            .0
            .time
            .total_cmp(&self.0.time)
            .then_with(|| other.0.kind.rank().cmp(&self.0.kind.rank()))
            .then_with(|| other.0.seq.cmp(&self.0.seq))
    }
}

/// Deterministic future-event list with a monotone clock.
pub struct EventQueue {
    heap: BinaryHeap<Queued>,
    clock: SimTime,
    next_seq: u64,
}

impl Default for EventQueue {
    fn default() -> Self {
        Self::new()
    }
}

impl EventQueue {
    pub fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            clock: 0.0,
            next_seq: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Enqueues an event. Scheduling into the past is a simulator bug.
    pub fn push(&mut self, time: SimTime, kind: EventKind) -> Result<()> {
        if !(time >= self.clock) {
            return Err(Error::EventInPast {
                event: time,
                clock: self.clock,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Queued(Event { time, kind, seq }));
        Ok(())
    }

    /// Pops the earliest event and moves the clock to it. `None` means the
    /// simulation has nothing left to do.
    pub fn advance(&mut self) -> Option<Event> {
        let Queued(event) = self.heap.pop()?;
        debug_assert!(event.time >= self.clock);
        self.clock = event.time;
        Some(event)
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|q| q.0.time)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arrival(p: ProgramId) -> EventKind {
        EventKind::ProgramArrival { program: p }
    }

    #[test]
    fn pops_in_time_order() {
        let mut q = EventQueue::new();
        q.push(5.0, arrival(0)).unwrap();
        q.push(3.0, arrival(1)).unwrap();
        assert_eq!(q.advance().unwrap().time, 3.0);
        assert_eq!(q.now(), 3.0);
        assert_eq!(q.advance().unwrap().time, 5.0);
        assert!(q.advance().is_none());
    }

    #[test]
    fn tool_return_beats_arrival_at_same_instant() {
        let mut q = EventQueue::new();
        q.push(2.0, arrival(0)).unwrap();
        q.push(2.0, EventKind::ToolCallComplete { program: 1 }).unwrap();
        assert!(matches!(
            q.advance().unwrap().kind,
            EventKind::ToolCallComplete { program: 1 }
        ));
        assert!(matches!(q.advance().unwrap().kind, EventKind::ProgramArrival { .. }));
    }

    #[test]
    fn equal_kind_ties_follow_insertion() {
        let mut q = EventQueue::new();
        q.push(4.0, arrival(7)).unwrap();
        q.push(4.0, arrival(8)).unwrap();
        q.push(9.0, arrival(9)).unwrap();
        let times: Vec<_> = std::iter::from_fn(|| q.advance()).map(|e| (e.time, e.kind)).collect();
        assert_eq!(
            times,
            vec![(4.0, arrival(7)), (4.0, arrival(8)), (9.0, arrival(9))]
        );
    }

    #[test]
    fn rejects_past_events() {
        let mut q = EventQueue::new();
        q.push(2.0, arrival(0)).unwrap();
        q.advance();
        assert!(matches!(q.push(1.0, arrival(1)), Err(Error::EventInPast { .. })));
        assert!(q.push(f64::NAN, arrival(1)).is_err());
    }

    #[test]
    fn empty_queue_signals_completion() {
        let mut q = EventQueue::new();
        assert!(q.advance().is_none());
    }
}
