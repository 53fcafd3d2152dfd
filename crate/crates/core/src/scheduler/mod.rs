//! Tool-call-aware KV-cache scheduling.
//!
//! [`Scheduler`] owns the waiting queue, the pin table, KV memory and the
//! interval estimator, and implements the arrival, finish and scheduling
//! handlers. What happens to a finished turn's KV and how waiting requests
//! are ranked is delegated to a [`Policy`]; the pinning policies live in
//! [`continuum`], the reference policies in [`crate::baselines`].

pub mod continuum;
mod core;
mod pins;
mod priority;
mod queue;
mod request;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audit::DecisionDetail;
use crate::baselines::{FcfsPolicy, InferceptConfig, InferceptPolicy, PlasPolicy};
use crate::error::Error;
use crate::estimator::Estimator;
use crate::sim::{MemoryConfig, ProgramId, SimTime};

pub use self::core::{Admission, DeadlockOutcome, FinishOutcome, Scheduler, SchedulerConfig};
pub use continuum::ContinuumPolicy;
pub use pins::{PinEntry, PinTable};
pub use priority::{get_priority, PriorityInputs, PriorityTuple, QueueKey};
pub use queue::WaitingQueue;
pub use request::{Request, RequestState};

/// What to do with a finished, non-final turn's KV blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Disposition {
    /// Keep the blocks on the GPU until `expiry` (may be infinite).
    Pin { expiry: SimTime },
    /// Swap to host memory when the tier is enabled and has room, else free.
    Offload,
    Free,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinishDecision {
    pub disposition: Disposition,
    pub detail: DecisionDetail,
}

pub struct FinishContext<'a> {
    pub now: SimTime,
    pub program: ProgramId,
    /// Tool the program calls next.
    pub tool: &'a str,
    pub estimator: &'a Estimator,
    /// GPU blocks the program holds.
    pub kv_blocks: usize,
    /// Tokens those blocks cover.
    pub kv_tokens: usize,
    pub memory: &'a MemoryConfig,
    pub dram_free_blocks: usize,
}

pub trait Policy: Send {
    fn kind(&self) -> PolicyKind;

    /// Sort key for a waiting request; smallest is scheduled first.
    fn priority(&self, inputs: &PriorityInputs) -> QueueKey;

    fn on_finish(&mut self, ctx: &FinishContext<'_>) -> FinishDecision;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Request-level FCFS; KV released as soon as a turn finishes.
    Fcfs,
    /// Program-level FCFS; KV released as soon as a turn finishes.
    ProgramFcfs,
    /// Least attained program service first.
    Plas,
    /// Preserve, swap or evict by cost comparison.
    Infercept,
    /// Confidence-bound TTL pinning with pinning-aware priority.
    Continuum,
    /// Fixed-threshold pinning with pinning-aware priority.
    ContinuumSimplified,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::Fcfs,
        PolicyKind::ProgramFcfs,
        PolicyKind::Plas,
        PolicyKind::Infercept,
        PolicyKind::Continuum,
        PolicyKind::ContinuumSimplified,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::Fcfs => "fcfs",
            PolicyKind::ProgramFcfs => "program-fcfs",
            PolicyKind::Plas => "plas",
            PolicyKind::Infercept => "infercept",
            PolicyKind::Continuum => "continuum",
            PolicyKind::ContinuumSimplified => "continuum-simplified",
        }
    }

    pub fn build(self, infercept: &InferceptConfig) -> Box<dyn Policy> {
        match self {
            PolicyKind::Fcfs => Box::new(FcfsPolicy::request_level()),
            PolicyKind::ProgramFcfs => Box::new(FcfsPolicy::program_level()),
            PolicyKind::Plas => Box::new(PlasPolicy),
            PolicyKind::Infercept => Box::new(InferceptPolicy::new(infercept.clone())),
            PolicyKind::Continuum => Box::new(ContinuumPolicy::full()),
            PolicyKind::ContinuumSimplified => Box::new(ContinuumPolicy::simplified()),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| {
                let valid: Vec<_> = PolicyKind::ALL.iter().map(|k| k.label()).collect();
                Error::Config(format!("unknown policy `{s}`; valid: {}", valid.join(", ")))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.label().parse::<PolicyKind>().unwrap(), k);
            assert_eq!(k.build(&InferceptConfig::default()).kind(), k);
        }
        let err = "lru".parse::<PolicyKind>().unwrap_err().to_string();
        assert!(err.contains("continuum-simplified"), "{err}");
    }
}
