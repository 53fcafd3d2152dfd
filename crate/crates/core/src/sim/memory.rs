use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::events::{ProgramId, SimTime};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryConfig {
    pub gpu_capacity_blocks: usize,
    pub block_size_tokens: usize,
    /// Zero disables the host offload tier.
    pub dram_capacity_blocks: usize,
    pub swap_bandwidth_blocks_per_s: f64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            gpu_capacity_blocks: 4096,
            block_size_tokens: 16,
            dram_capacity_blocks: 0,
            swap_bandwidth_blocks_per_s: 1000.0,
        }
    }
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gpu_capacity_blocks == 0 {
            return Err(Error::Config("memory.gpu_capacity_blocks must be >= 1".into()));
        }
        if self.block_size_tokens == 0 {
            return Err(Error::Config("memory.block_size_tokens must be >= 1".into()));
        }
        if !(self.swap_bandwidth_blocks_per_s > 0.0) || !self.swap_bandwidth_blocks_per_s.is_finite() {
            return Err(Error::Config(
                "memory.swap_bandwidth_blocks_per_s must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn offload_enabled(&self) -> bool {
        self.dram_capacity_blocks > 0
    }

    pub fn blocks_for(&self, tokens: usize) -> usize {
        tokens.div_ceil(self.block_size_tokens)
    }

    /// Seconds to move `blocks` across the host link in one direction.
    pub fn transfer_time(&self, blocks: usize) -> f64 {
        blocks as f64 / self.swap_bandwidth_blocks_per_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocOutcome {
    Ok { blocks: usize },
    Insufficient { needed: usize, free: usize },
}

impl AllocOutcome {
    pub fn is_ok(&self) -> bool {
        matches!(self, AllocOutcome::Ok { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SwapOutOutcome {
    Swapped { blocks: usize, done_at: SimTime },
    /// Host tier full or disabled; the blocks were dropped instead.
    Evicted { blocks: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SwapInOutcome {
    Loaded { blocks: usize, done_at: SimTime },
    Insufficient { needed: usize, free: usize },
}

/// Block-granular KV accounting over a GPU tier and an optional host tier.
///
/// Each program's KV lives wholly in one tier at a time. Transfers are
/// non-blocking for compute but serialized per direction on the host link.
#[derive(Debug, Clone)]
pub struct MemoryPool {
    config: MemoryConfig,
    gpu: BTreeMap<ProgramId, usize>,
    dram: BTreeMap<ProgramId, usize>,
    gpu_used: usize,
    dram_used: usize,
    out_link_free_at: SimTime,
    in_link_free_at: SimTime,
    /// When a program's swap-out lands in host memory.
    dram_ready_at: BTreeMap<ProgramId, SimTime>,
}

impl MemoryPool {
    pub fn new(config: MemoryConfig) -> Self {
        Self {
            config,
            gpu: BTreeMap::new(),
            dram: BTreeMap::new(),
            gpu_used: 0,
            dram_used: 0,
            out_link_free_at: 0.0,
            in_link_free_at: 0.0,
            dram_ready_at: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.config
    }

    pub fn blocks_for(&self, tokens: usize) -> usize {
        self.config.blocks_for(tokens)
    }

    pub fn gpu_used(&self) -> usize {
        self.gpu_used
    }

    pub fn gpu_free(&self) -> usize {
        self.config.gpu_capacity_blocks - self.gpu_used
    }

    pub fn dram_used(&self) -> usize {
        self.dram_used
    }

    pub fn dram_free(&self) -> usize {
        self.config.dram_capacity_blocks - self.dram_used
    }

    pub fn gpu_blocks(&self, program: ProgramId) -> usize {
        self.gpu.get(&program).copied().unwrap_or(0)
    }

    pub fn dram_blocks(&self, program: ProgramId) -> usize {
        self.dram.get(&program).copied().unwrap_or(0)
    }

    /// Adds `ceil(tokens / block_size)` blocks to the program's GPU share.
    pub fn alloc_blocks(&mut self, program: ProgramId, tokens: usize) -> AllocOutcome {
        let needed = self.blocks_for(tokens);
        self.grow(program, needed)
    }

    /// Grows the program's GPU share to cover `total_tokens`. Never shrinks.
    pub fn reserve(&mut self, program: ProgramId, total_tokens: usize) -> AllocOutcome {
        let target = self.blocks_for(total_tokens);
        let needed = target.saturating_sub(self.gpu_blocks(program));
        self.grow(program, needed)
    }

    fn grow(&mut self, program: ProgramId, needed: usize) -> AllocOutcome {
        let free = self.gpu_free();
        if needed > free {
            return AllocOutcome::Insufficient { needed, free };
        }
        if needed > 0 {
            *self.gpu.entry(program).or_insert(0) += needed;
            self.gpu_used += needed;
        }
        AllocOutcome::Ok { blocks: needed }
    }

    /// Releases every GPU block of the program; returns how many.
    pub fn free_blocks(&mut self, program: ProgramId) -> usize {
        let blocks = self.gpu.remove(&program).unwrap_or(0);
        self.gpu_used -= blocks;
        blocks
    }

    /// Drops the program's host-tier copy; returns how many blocks.
    pub fn free_dram(&mut self, program: ProgramId) -> usize {
        let blocks = self.dram.remove(&program).unwrap_or(0);
        self.dram_used -= blocks;
        self.dram_ready_at.remove(&program);
        blocks
    }

    pub fn swap_out(&mut self, program: ProgramId, now: SimTime) -> Result<SwapOutOutcome> {
        let blocks = self.gpu_blocks(program);
        if blocks == 0 {
            return Err(Error::Invariant(format!(
                "swap_out of program {program} with no GPU blocks"
            )));
        }
        self.free_blocks(program);
        if blocks > self.dram_free() {
            return Ok(SwapOutOutcome::Evicted { blocks });
        }
        let start = now.max(self.out_link_free_at);
        let done_at = start + self.config.transfer_time(blocks);
        self.out_link_free_at = done_at;
        *self.dram.entry(program).or_insert(0) += blocks;
        self.dram_used += blocks;
        self.dram_ready_at.insert(program, done_at);
        Ok(SwapOutOutcome::Swapped { blocks, done_at })
    }

    pub fn swap_in(&mut self, program: ProgramId, now: SimTime) -> Result<SwapInOutcome> {
        let blocks = self.dram_blocks(program);
        if blocks == 0 {
            return Err(Error::Invariant(format!(
                "swap_in of program {program} with nothing in host memory"
            )));
        }
        let free = self.gpu_free();
        if blocks > free {
            return Ok(SwapInOutcome::Insufficient { needed: blocks, free });
        }
        let ready = self.dram_ready_at.get(&program).copied().unwrap_or(0.0);
        let start = now.max(self.in_link_free_at).max(ready);
        let done_at = start + self.config.transfer_time(blocks);
        self.in_link_free_at = done_at;
        self.free_dram(program);
        *self.gpu.entry(program).or_insert(0) += blocks;
        self.gpu_used += blocks;
        Ok(SwapInOutcome::Loaded { blocks, done_at })
    }

    /// Conservation check: per-tier sums within capacity and every program
    /// resident in at most one tier.
    pub fn check(&self) -> Result<()> {
        let gpu_sum: usize = self.gpu.values().sum();
        let dram_sum: usize = self.dram.values().sum();
        if gpu_sum != self.gpu_used || gpu_sum > self.config.gpu_capacity_blocks {
            return Err(Error::Invariant(format!(
                "GPU blocks {gpu_sum} (tracked {}) exceed capacity {}",
                self.gpu_used, self.config.gpu_capacity_blocks
            )));
        }
        if dram_sum != self.dram_used || dram_sum > self.config.dram_capacity_blocks {
            return Err(Error::Invariant(format!(
                "host blocks {dram_sum} (tracked {}) exceed capacity {}",
                self.dram_used, self.config.dram_capacity_blocks
            )));
        }
        if let Some(p) = self.gpu.keys().find(|p| self.dram.contains_key(p)) {
            return Err(Error::Invariant(format!("program {p} resident in both tiers")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(gpu: usize, dram: usize, bw: f64) -> MemoryPool {
        MemoryPool::new(MemoryConfig {
            gpu_capacity_blocks: gpu,
            block_size_tokens: 16,
            dram_capacity_blocks: dram,
            swap_bandwidth_blocks_per_s: bw,
        })
    }

    #[test]
    fn alloc_rounds_up_to_blocks() {
        let mut m = pool(10, 0, 1.0);
        assert_eq!(m.alloc_blocks(0, 33), AllocOutcome::Ok { blocks: 3 });
        assert_eq!(m.gpu_blocks(0), 3);
        assert_eq!(m.alloc_blocks(1, 0), AllocOutcome::Ok { blocks: 0 });
    }

    #[test]
    fn insufficient_leaves_state_unchanged() {
        let mut m = pool(10, 0, 1.0);
        assert!(m.alloc_blocks(0, 9 * 16).is_ok());
        let out = m.alloc_blocks(1, 2 * 16);
        assert_eq!(out, AllocOutcome::Insufficient { needed: 2, free: 1 });
        assert_eq!(m.gpu_blocks(1), 0);
        assert_eq!(m.gpu_used(), 9);
    }

    #[test]
    fn free_returns_count_and_is_idempotent() {
        let mut m = pool(10, 0, 1.0);
        m.alloc_blocks(3, 5 * 16);
        assert_eq!(m.free_blocks(3), 5);
        assert_eq!(m.free_blocks(3), 0);
        assert_eq!(m.free_blocks(42), 0);
        assert_eq!(m.alloc_blocks(3, 5 * 16), AllocOutcome::Ok { blocks: 5 });
    }

    #[test]
    fn reserve_grows_to_target() {
        let mut m = pool(10, 0, 1.0);
        m.reserve(0, 20);
        assert_eq!(m.gpu_blocks(0), 2);
        m.reserve(0, 48);
        assert_eq!(m.gpu_blocks(0), 3);
        m.reserve(0, 1);
        assert_eq!(m.gpu_blocks(0), 3);
    }

    #[test]
    fn swap_completion_time_follows_bandwidth() {
        let mut m = pool(16, 16, 4.0);
        m.alloc_blocks(0, 8 * 16);
        match m.swap_out(0, 10.0).unwrap() {
            SwapOutOutcome::Swapped { blocks, done_at } => {
                assert_eq!(blocks, 8);
                assert_eq!(done_at, 12.0);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(m.gpu_blocks(0), 0);
        assert_eq!(m.dram_blocks(0), 8);
        match m.swap_in(0, 20.0).unwrap() {
            SwapInOutcome::Loaded { done_at, .. } => assert_eq!(done_at, 22.0),
            other => panic!("{other:?}"),
        }
        assert_eq!(m.gpu_blocks(0), 8);
        m.check().unwrap();
    }

    #[test]
    fn swap_in_waits_for_outbound_copy() {
        let mut m = pool(16, 16, 4.0);
        m.alloc_blocks(0, 8 * 16);
        m.swap_out(0, 10.0).unwrap();
        match m.swap_in(0, 10.5).unwrap() {
            SwapInOutcome::Loaded { done_at, .. } => assert_eq!(done_at, 14.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn swap_out_without_host_tier_evicts() {
        let mut m = pool(16, 0, 4.0);
        m.alloc_blocks(0, 8 * 16);
        assert_eq!(m.swap_out(0, 0.0).unwrap(), SwapOutOutcome::Evicted { blocks: 8 });
        assert_eq!(m.gpu_used(), 0);
        assert_eq!(m.dram_used(), 0);
    }

    #[test]
    fn swap_in_needs_gpu_room() {
        let mut m = pool(8, 16, 4.0);
        m.alloc_blocks(0, 8 * 16);
        m.swap_out(0, 0.0).unwrap();
        m.alloc_blocks(1, 4 * 16);
        assert!(matches!(
            m.swap_in(0, 5.0).unwrap(),
            SwapInOutcome::Insufficient { needed: 8, free: 4 }
        ));
        assert_eq!(m.dram_blocks(0), 8);
    }

    #[test]
    fn swap_preconditions() {
        let mut m = pool(8, 16, 4.0);
        assert!(m.swap_out(0, 0.0).is_err());
        assert!(m.swap_in(0, 0.0).is_err());
    }
}
