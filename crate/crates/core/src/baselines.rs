//! Reference policies: request- and program-level FCFS, least attained
//! service, and cost-comparing preserve/swap/evict.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::audit::{DecisionDetail, PreserveChoice};
use crate::error::{Error, Result};
use crate::scheduler::{
    Disposition, FinishContext, FinishDecision, Policy, PolicyKind, PriorityInputs, QueueKey,
};
use crate::sim::ProgramId;

/// Engine seconds attributed to each program.
#[derive(Debug, Clone, Default)]
pub struct ServiceLedger {
    service: BTreeMap<ProgramId, f64>,
}

impl ServiceLedger {
    pub fn credit(&mut self, program: ProgramId, seconds: f64) {
        *self.service.entry(program).or_insert(0.0) += seconds;
    }

    pub fn get(&self, program: ProgramId) -> f64 {
        self.service.get(&program).copied().unwrap_or(0.0)
    }
}

// Turn-blind: swap out when the host tier exists, otherwise discard.
fn release_now() -> FinishDecision {
    FinishDecision {
        disposition: Disposition::Offload,
        detail: DecisionDetail::Release,
    }
}

fn rank(preempted: bool) -> [u8; 2] {
    [u8::from(!preempted), 0]
}

/// First come, first served, by request or by program arrival. KV leaves
/// the GPU the moment a turn finishes.
#[derive(Debug, Clone, Copy)]
pub struct FcfsPolicy {
    program_level: bool,
}

impl FcfsPolicy {
    pub fn request_level() -> Self {
        Self { program_level: false }
    }

    pub fn program_level() -> Self {
        Self { program_level: true }
    }
}

impl Policy for FcfsPolicy {
    fn kind(&self) -> PolicyKind {
        if self.program_level {
            PolicyKind::ProgramFcfs
        } else {
            PolicyKind::Fcfs
        }
    }

    fn priority(&self, i: &PriorityInputs) -> QueueKey {
        let (primary, secondary) = if self.program_level {
            (i.program_arrival, i.request_arrival)
        } else {
            (i.request_arrival, i.program_arrival)
        };
        QueueKey {
            ranks: rank(i.preempted),
            primary,
            secondary,
            sequence: i.sequence,
        }
    }

    fn on_finish(&mut self, _ctx: &FinishContext<'_>) -> FinishDecision {
        release_now()
    }
}

/// Program-level least attained service: the program that has used the
/// least engine time goes first.
#[derive(Debug, Clone, Copy)]
pub struct PlasPolicy;

impl Policy for PlasPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Plas
    }

    fn priority(&self, i: &PriorityInputs) -> QueueKey {
        QueueKey {
            ranks: rank(i.preempted),
            primary: i.program_service_s,
            secondary: i.program_arrival,
            sequence: i.sequence,
        }
    }

    fn on_finish(&mut self, _ctx: &FinishContext<'_>) -> FinishDecision {
        release_now()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferceptConfig {
    /// Fixed latency added to each transfer direction.
    pub transfer_overhead_s: f64,
}

impl Default for InferceptConfig {
    fn default() -> Self {
        Self {
            transfer_overhead_s: 0.0,
        }
    }
}

impl InferceptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.transfer_overhead_s >= 0.0) || !self.transfer_overhead_s.is_finite() {
            return Err(Error::Config("infercept.transfer_overhead_s must be >= 0".into()));
        }
        Ok(())
    }
}

/// Prices releasing a paused program's KV against keeping it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferceptCostModel {
    pub swap_bandwidth_blocks_per_s: f64,
    pub transfer_overhead_s: f64,
}

impl InferceptCostModel {
    pub fn swap_out(&self, blocks: usize) -> f64 {
        blocks as f64 / self.swap_bandwidth_blocks_per_s + self.transfer_overhead_s
    }

    pub fn swap_in(&self, blocks: usize) -> f64 {
        self.swap_out(blocks)
    }

    pub fn recompute(tokens: usize, prefill_rate_tokens_per_s: f64) -> f64 {
        tokens as f64 / prefill_rate_tokens_per_s
    }
}

/// Keeps KV on the GPU while the tool runs when the predicted tool time is
/// cheaper than releasing it; otherwise swaps if host memory has room and
/// evicts if not. Scheduling order is FCFS.
#[derive(Debug, Clone)]
pub struct InferceptPolicy {
    config: InferceptConfig,
}

impl InferceptPolicy {
    pub fn new(config: InferceptConfig) -> Self {
        Self { config }
    }
}

impl Policy for InferceptPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Infercept
    }

    fn priority(&self, i: &PriorityInputs) -> QueueKey {
        FcfsPolicy::request_level().priority(i)
    }

    fn on_finish(&mut self, ctx: &FinishContext<'_>) -> FinishDecision {
        let cost = InferceptCostModel {
            swap_bandwidth_blocks_per_s: ctx.memory.swap_bandwidth_blocks_per_s,
            transfer_overhead_s: self.config.transfer_overhead_s,
        };
        let predicted = ctx.estimator.predicted_interval(ctx.tool);
        let round_trip = cost.swap_out(ctx.kv_blocks) + cost.swap_in(ctx.kv_blocks);
        let (choice, disposition) = if predicted < round_trip {
            (PreserveChoice::Preserve, Disposition::Pin { expiry: f64::INFINITY })
        } else if ctx.memory.offload_enabled() && ctx.kv_blocks <= ctx.dram_free_blocks {
            (PreserveChoice::Swap, Disposition::Offload)
        } else {
            (PreserveChoice::Evict, Disposition::Free)
        };
        FinishDecision {
            disposition,
            detail: DecisionDetail::CostCompare {
                predicted_tool_s: predicted,
                swap_round_trip_s: round_trip,
                choice,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{Estimator, EstimatorConfig};
    use crate::sim::MemoryConfig;

    fn inputs(preempted: bool, program_arrival: f64, request_arrival: f64, service: f64, seq: u64) -> PriorityInputs {
        PriorityInputs {
            preempted,
            pinned: false,
            program_arrival,
            request_arrival,
            program_service_s: service,
            sequence: seq,
        }
    }

    #[test]
    fn fcfs_orders_by_request_then_program_arrival() {
        let f = FcfsPolicy::request_level();
        let a = f.priority(&inputs(false, 0.0, 5.0, 0.0, 0));
        let b = f.priority(&inputs(false, 3.0, 4.0, 0.0, 1));
        assert!(b < a);
        let g = FcfsPolicy::program_level();
        assert!(g.priority(&inputs(false, 0.0, 5.0, 0.0, 0)) < g.priority(&inputs(false, 3.0, 4.0, 0.0, 1)));
        // preempted work jumps the queue
        assert!(f.priority(&inputs(true, 9.0, 9.0, 0.0, 9)) < b);
    }

    #[test]
    fn plas_prefers_least_service() {
        let p = PlasPolicy;
        assert!(p.priority(&inputs(false, 5.0, 5.0, 1.0, 0)) < p.priority(&inputs(false, 0.0, 0.0, 2.0, 1)));
        assert!(p.priority(&inputs(false, 0.0, 9.0, 1.0, 3)) < p.priority(&inputs(false, 1.0, 0.0, 1.0, 2)));
    }

    fn decide(est: &Estimator, memory: &MemoryConfig, blocks: usize, dram_free: usize) -> FinishDecision {
        InferceptPolicy::new(InferceptConfig::default()).on_finish(&FinishContext {
            now: 0.0,
            program: 0,
            tool: "t",
            estimator: est,
            kv_blocks: blocks,
            kv_tokens: blocks * memory.block_size_tokens,
            memory,
            dram_free_blocks: dram_free,
        })
    }

    #[test]
    fn infercept_compares_against_round_trip() {
        let memory = MemoryConfig {
            gpu_capacity_blocks: 100,
            block_size_tokens: 16,
            dram_capacity_blocks: 100,
            swap_bandwidth_blocks_per_s: 10.0,
        };
        let mut est = Estimator::new(EstimatorConfig::default());
        est.record_interval("t", 1.0);
        // 20 blocks at 10 blocks/s: 4 s round trip > 1 s predicted
        assert_eq!(decide(&est, &memory, 20, 100).disposition, Disposition::Pin { expiry: f64::INFINITY });
        // 2 blocks: 0.4 s round trip < 1 s
        assert_eq!(decide(&est, &memory, 2, 100).disposition, Disposition::Offload);
        assert_eq!(decide(&est, &memory, 2, 1).disposition, Disposition::Free);
        let no_dram = MemoryConfig {
            dram_capacity_blocks: 0,
            ..memory
        };
        assert_eq!(decide(&est, &no_dram, 2, 0).disposition, Disposition::Free);
        assert!(matches!(decide(&est, &no_dram, 20, 0).disposition, Disposition::Pin { .. }));
    }

    #[test]
    fn infercept_prediction_falls_back() {
        let mut est = Estimator::new(EstimatorConfig::default());
        assert_eq!(est.predicted_interval("x"), est.config().t_default);
        est.record_interval("y", 3.0);
        assert_eq!(est.predicted_interval("x"), 3.0);
        est.record_interval("x", 1.0);
        assert_eq!(est.predicted_interval("x"), 1.0);
    }
}
