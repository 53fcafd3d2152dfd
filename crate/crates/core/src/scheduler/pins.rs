use std::collections::BTreeMap;

use crate::sim::{ProgramId, SimTime};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinEntry {
    pub id: u64,
    pub program: ProgramId,
    /// `f64::INFINITY` for pins that last until the next turn arrives.
    pub expiry: SimTime,
    pub pinned_blocks: usize,
}

/// Programs whose finished turn keeps its KV on the GPU, keyed by program.
#[derive(Debug, Clone, Default)]
pub struct PinTable {
    entries: BTreeMap<ProgramId, PinEntry>,
    next_id: u64,
}

impl PinTable {
    pub fn insert(&mut self, program: ProgramId, expiry: SimTime, pinned_blocks: usize) -> PinEntry {
        let entry = PinEntry {
            id: self.next_id,
            program,
            expiry,
            pinned_blocks,
        };
        self.next_id += 1;
        self.entries.insert(program, entry);
        entry
    }

    pub fn get(&self, program: ProgramId) -> Option<&PinEntry> {
        self.entries.get(&program)
    }

    pub fn contains(&self, program: ProgramId) -> bool {
        self.entries.contains_key(&program)
    }

    pub fn remove(&mut self, program: ProgramId) -> Option<PinEntry> {
        self.entries.remove(&program)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn created(&self) -> u64 {
        self.next_id
    }

    pub fn iter(&self) -> impl Iterator<Item = &PinEntry> {
        self.entries.values()
    }

    pub fn total_blocks(&self) -> usize {
        self.entries.values().map(|e| e.pinned_blocks).sum()
    }
}
