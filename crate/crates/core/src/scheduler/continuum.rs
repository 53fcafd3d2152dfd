//! The pinning policies: confidence-bound TTL and its fixed-threshold
//! simplification. Both rank waiting requests with [`get_priority`].

use super::{
    get_priority, Disposition, FinishContext, FinishDecision, Policy, PolicyKind, PriorityInputs,
    QueueKey,
};
use crate::audit::DecisionDetail;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContinuumPolicy {
    simplified: bool,
}

impl ContinuumPolicy {
    pub fn full() -> Self {
        Self { simplified: false }
    }

    pub fn simplified() -> Self {
        Self { simplified: true }
    }
}

impl Policy for ContinuumPolicy {
    fn kind(&self) -> PolicyKind {
        if self.simplified {
            PolicyKind::ContinuumSimplified
        } else {
            PolicyKind::Continuum
        }
    }

    fn priority(&self, inputs: &PriorityInputs) -> QueueKey {
        get_priority(inputs).into()
    }

    fn on_finish(&mut self, ctx: &FinishContext<'_>) -> FinishDecision {
        let est = ctx.estimator;
        if self.simplified {
            let pin_s = est.simplified_decision(ctx.tool);
            let disposition = match pin_s {
                Some(t) if t > 0.0 => Disposition::Pin { expiry: ctx.now + t },
                _ => Disposition::Offload,
            };
            return FinishDecision {
                disposition,
                detail: DecisionDetail::Threshold {
                    mean_s: est.mean_interval(ctx.tool),
                    threshold_s: est.config().t_thresh,
                    pin_s,
                },
            };
        }
        let bound = est.select_bound(ctx.tool);
        let ttl = est.raw_ttl(bound.value).min(est.config().ttl_max());
        // A zero TTL means "don't pin".
        let disposition = if ttl > 0.0 {
            Disposition::Pin { expiry: ctx.now + ttl }
        } else {
            Disposition::Offload
        };
        FinishDecision {
            disposition,
            detail: DecisionDetail::Ttl {
                bound_s: bound.value,
                source: bound.source,
                ttl_s: ttl,
            },
        }
    }
}
