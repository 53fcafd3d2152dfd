use std::cmp::Ordering;

use crate::sim::SimTime;

/// What a policy may look at when ranking a waiting request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorityInputs {
    pub preempted: bool,
    pub pinned: bool,
    pub program_arrival: SimTime,
    pub request_arrival: SimTime,
    /// Engine seconds attributed to the program so far.
    pub program_service_s: f64,
    pub sequence: u64,
}

/// Generic lexicographic sort key; the smallest key is scheduled first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueKey {
    pub ranks: [u8; 2],
    pub primary: f64,
    pub secondary: f64,
    pub sequence: u64,
}

impl QueueKey {
    /// The key with status ranks cleared, used to compare a waiting
    /// candidate against running requests when preempting.
    pub fn base(self) -> Self {
        Self { ranks: [0, 0], ..self }
    }
}

impl Eq for QueueKey {}

impl PartialOrd for QueueKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QueueKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.ranks
            .cmp(&other.ranks)
            .then_with(|| self.primary.total_cmp(&other.primary))
            .then_with(|| self.secondary.total_cmp(&other.secondary))
            .then_with(|| self.sequence.cmp(&other.sequence))
    }
}

/// Pinning-aware priority: preempted first, then pinned programs, then
/// program arrival order, then request order. Lower sorts earlier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct PriorityTuple {
    pub preempted_rank: u8,
    pub pinned_rank: u8,
    program_arrival_bits: OrderedTime,
    pub request_sequence: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrderedTime(f64);

impl Eq for OrderedTime {}

impl PartialOrd for OrderedTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrderedTime {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl PriorityTuple {
    pub fn program_arrival_time(&self) -> SimTime {
        self.program_arrival_bits.0
    }
}

pub fn get_priority(inputs: &PriorityInputs) -> PriorityTuple {
    PriorityTuple {
        preempted_rank: u8::from(!inputs.preempted),
        pinned_rank: u8::from(!inputs.pinned),
        program_arrival_bits: OrderedTime(inputs.program_arrival),
        request_sequence: inputs.sequence,
    }
}

impl From<PriorityTuple> for QueueKey {
    fn from(t: PriorityTuple) -> Self {
        QueueKey {
            ranks: [t.preempted_rank, t.pinned_rank],
            primary: t.program_arrival_time(),
            secondary: 0.0,
            sequence: t.request_sequence,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inputs(preempted: bool, pinned: bool, program_arrival: f64, sequence: u64) -> PriorityInputs {
        PriorityInputs {
            preempted,
            pinned,
            program_arrival,
            request_arrival: 0.0,
            program_service_s: 0.0,
            sequence,
        }
    }

    #[test]
    fn preempted_beats_pinned() {
        let preempted = get_priority(&inputs(true, false, 9.0, 9));
        let pinned = get_priority(&inputs(false, true, 0.0, 0));
        assert!(preempted < pinned);
    }

    #[test]
    fn pinned_beats_earlier_unpinned() {
        let pinned = get_priority(&inputs(false, true, 5.0, 5));
        let unpinned = get_priority(&inputs(false, false, 1.0, 1));
        assert!(pinned < unpinned);
    }

    #[test]
    fn program_fcfs_among_unpinned() {
        let a = get_priority(&inputs(false, false, 3.0, 7));
        let b = get_priority(&inputs(false, false, 5.0, 2));
        assert!(a < b);
        assert!(QueueKey::from(a) < QueueKey::from(b));
    }

    proptest! {
        #[test]
        fn key_order_matches_tuple_order(
            a in (any::<bool>(), any::<bool>(), 0.0f64..100.0, 0u64..100),
            b in (any::<bool>(), any::<bool>(), 0.0f64..100.0, 0u64..100),
        ) {
            let ta = get_priority(&inputs(a.0, a.1, a.2, a.3));
            let tb = get_priority(&inputs(b.0, b.1, b.2, b.3));
            prop_assert_eq!(ta.cmp(&tb), QueueKey::from(ta).cmp(&QueueKey::from(tb)));
        }
    }
}
