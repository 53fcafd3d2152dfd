use serde::{Deserialize, Serialize};

use super::events::RequestId;
use crate::error::{Error, Result};

/// Linear-in-tokens cost model for a continuously batched engine.
///
/// Prefill runs at a fixed token rate. Each decode iteration emits one token
/// per decoding request and costs `decode_time_per_iteration_s`, plus an
/// optional per-sequence slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub prefill_rate_tokens_per_s: f64,
    pub decode_time_per_iteration_s: f64,
    pub decode_time_per_sequence_s: f64,
    pub max_batch_requests: usize,
    pub max_batch_tokens_per_iteration: usize,
    pub chunked_prefill: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            prefill_rate_tokens_per_s: 10_000.0,
            decode_time_per_iteration_s: 0.03,
            decode_time_per_sequence_s: 0.0,
            max_batch_requests: 64,
            max_batch_tokens_per_iteration: 8192,
            chunked_prefill: false,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.prefill_rate_tokens_per_s) {
            return Err(Error::Config("engine.prefill_rate_tokens_per_s must be positive".into()));
        }
        if !positive(self.decode_time_per_iteration_s) {
            return Err(Error::Config("engine.decode_time_per_iteration_s must be positive".into()));
        }
        if !(self.decode_time_per_sequence_s >= 0.0) {
            return Err(Error::Config("engine.decode_time_per_sequence_s must be >= 0".into()));
        }
        if self.max_batch_requests == 0 {
            return Err(Error::Config("engine.max_batch_requests must be >= 1".into()));
        }
        if self.max_batch_tokens_per_iteration == 0 {
            return Err(Error::Config(
                "engine.max_batch_tokens_per_iteration must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn prefill_time(&self, tokens: usize) -> f64 {
        tokens as f64 / self.prefill_rate_tokens_per_s
    }

    pub fn decode_iteration_time(&self, decoding: usize) -> f64 {
        if decoding == 0 {
            0.0
        } else {
            self.decode_time_per_iteration_s + self.decode_time_per_sequence_s * decoding as f64
        }
    }

    /// Chooses the work for one iteration from ready, GPU-resident requests
    /// (in admission order). Decoding requests come first; prefill fills the
    /// remaining token budget, whole-request unless chunking is on. One
    /// prefill is always admitted when nothing else would run.
    pub fn plan_iteration(&self, ready: &[IterationWork]) -> BatchPlan {
        let mut budget = self.max_batch_tokens_per_iteration;
        let mut work = Vec::new();
        let mut decoding = 0;
        for r in ready.iter().filter(|r| r.prefill_remaining == 0 && r.decode_remaining > 0) {
            if budget == 0 {
                break;
            }
            budget -= 1;
            decoding += 1;
            work.push(PlannedWork {
                request: r.request,
                prefill_tokens: 0,
                decodes: true,
            });
        }
        let mut prefill_tokens = 0;
        for r in ready.iter().filter(|r| r.prefill_remaining > 0) {
            let chunk = if self.chunked_prefill {
                r.prefill_remaining.min(budget)
            } else if r.prefill_remaining <= budget || (prefill_tokens == 0 && work.is_empty()) {
                r.prefill_remaining
            } else {
                0
            };
            if chunk == 0 {
                break;
            }
            budget = budget.saturating_sub(chunk);
            prefill_tokens += chunk;
            work.push(PlannedWork {
                request: r.request,
                prefill_tokens: chunk,
                decodes: false,
            });
        }
        let duration = self.prefill_time(prefill_tokens) + self.decode_iteration_time(decoding);
        BatchPlan { work, duration }
    }
}

/// Engine-facing view of one running request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IterationWork {
    pub request: RequestId,
    pub prefill_remaining: usize,
    pub decode_remaining: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlannedWork {
    pub request: RequestId,
    pub prefill_tokens: usize,
    /// Emits one decode token this iteration.
    pub decodes: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    pub work: Vec<PlannedWork>,
    pub duration: f64,
}

impl BatchPlan {
    pub fn is_empty(&self) -> bool {
        self.work.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(chunked: bool, budget: usize) -> EngineConfig {
        EngineConfig {
            prefill_rate_tokens_per_s: 1000.0,
            decode_time_per_iteration_s: 0.05,
            decode_time_per_sequence_s: 0.0,
            max_batch_requests: 8,
            max_batch_tokens_per_iteration: budget,
            chunked_prefill: chunked,
        }
    }

    fn w(request: RequestId, prefill: usize, decode: usize) -> IterationWork {
        IterationWork {
            request,
            prefill_remaining: prefill,
            decode_remaining: decode,
        }
    }

    #[test]
    fn prefill_costs_tokens_over_rate() {
        let plan = cfg(false, 4096).plan_iteration(&[w(0, 100, 5)]);
        assert!((plan.duration - 0.1).abs() < 1e-12);
        assert_eq!(plan.work[0].prefill_tokens, 100);
        assert!(!plan.work[0].decodes);
    }

    #[test]
    fn fully_cached_request_goes_straight_to_decode() {
        let plan = cfg(false, 4096).plan_iteration(&[w(0, 0, 5)]);
        assert!(plan.work[0].decodes);
        assert!((plan.duration - 0.05).abs() < 1e-12);
    }

    #[test]
    fn co_resident_decoders_share_iterations() {
        let engine = cfg(false, 4096);
        let mut reqs = vec![w(0, 0, 10), w(1, 0, 10)];
        let mut elapsed = 0.0;
        while reqs.iter().any(|r| r.decode_remaining > 0) {
            let plan = engine.plan_iteration(&reqs);
            elapsed += plan.duration;
            for p in &plan.work {
                reqs[p.request].decode_remaining -= 1;
            }
        }
        assert!((elapsed - 0.5).abs() < 1e-9);
    }

    #[test]
    fn chunked_prefill_respects_budget() {
        let plan = cfg(true, 64).plan_iteration(&[w(0, 0, 3), w(1, 100, 3)]);
        assert_eq!(plan.work.len(), 2);
        assert_eq!(plan.work[1].prefill_tokens, 63);
        assert!((plan.duration - (0.063 + 0.05)).abs() < 1e-12);
    }

    #[test]
    fn unchunked_prefill_defers_when_over_budget() {
        let plan = cfg(false, 64).plan_iteration(&[w(0, 0, 3), w(1, 100, 3)]);
        assert_eq!(plan.work.len(), 1);
        let alone = cfg(false, 64).plan_iteration(&[w(1, 100, 3)]);
        assert_eq!(alone.work[0].prefill_tokens, 100);
    }

    #[test]
    fn per_sequence_slope() {
        let mut engine = cfg(false, 4096);
        engine.decode_time_per_sequence_s = 0.01;
        let plan = engine.plan_iteration(&[w(0, 0, 3), w(1, 0, 3)]);
        assert!((plan.duration - 0.07).abs() < 1e-12);
    }

    #[test]
    fn rejects_nonpositive_rates() {
        let mut engine = cfg(false, 4096);
        engine.prefill_rate_tokens_per_s = 0.0;
        assert!(engine.validate().is_err());
        let mut engine = cfg(false, 4096);
        engine.max_batch_requests = 0;
        assert!(engine.validate().is_err());
    }
}
