use std::collections::BTreeMap;

use crate::sim::{ProgramId, RequestId};

/// Waiting and preempted requests, with per-program membership counts.
#[derive(Debug, Clone, Default)]
pub struct WaitingQueue {
    members: Vec<RequestId>,
    programs: BTreeMap<ProgramId, usize>,
}

impl WaitingQueue {
    pub fn push(&mut self, request: RequestId, program: ProgramId) {
        self.members.push(request);
        *self.programs.entry(program).or_insert(0) += 1;
    }

    pub fn remove(&mut self, request: RequestId, program: ProgramId) -> bool {
        let Some(pos) = self.members.iter().position(|&r| r == request) else {
            return false;
        };
        self.members.remove(pos);
        if let Some(n) = self.programs.get_mut(&program) {
            *n -= 1;
            if *n == 0 {
                self.programs.remove(&program);
            }
        }
        true
    }

    pub fn contains_program(&self, program: ProgramId) -> bool {
        self.programs.contains_key(&program)
    }

    pub fn contains(&self, request: RequestId) -> bool {
        self.members.contains(&request)
    }

    pub fn iter(&self) -> impl Iterator<Item = RequestId> + '_ {
        self.members.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn program_membership() {
        let mut q = WaitingQueue::default();
        q.push(1, 10);
        q.push(2, 10);
        q.push(3, 11);
        assert!(q.contains_program(10));
        q.remove(1, 10);
        assert!(q.contains_program(10));
        q.remove(2, 10);
        assert!(!q.contains_program(10));
        assert!(!q.remove(2, 10));
        assert_eq!(q.iter().collect::<Vec<_>>(), vec![3]);
    }
}
