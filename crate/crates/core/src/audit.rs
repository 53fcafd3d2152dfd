//! Per-decision audit trail: pins, unpins, KV releases, preemptions.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::estimator::BoundSource;
use crate::sim::{ProgramId, RequestId, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnpinCause {
    Expired,
    Admitted,
    Victim,
    ProgramDone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReleaseAction {
    Swap,
    Free,
    /// A swap was requested but the host tier had no room.
    EvictFallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReleaseCause {
    Finish,
    Expired,
    Victim,
    Preempt,
    ProgramDone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreserveChoice {
    Preserve,
    Swap,
    Evict,
}

/// Why a policy did what it did with a finished turn's KV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum DecisionDetail {
    /// Confidence-bound TTL.
    Ttl {
        bound_s: f64,
        source: BoundSource,
        ttl_s: f64,
    },
    /// Fixed threshold on the mean interval.
    Threshold {
        mean_s: Option<f64>,
        threshold_s: f64,
        pin_s: Option<f64>,
    },
    /// Preserve when the predicted tool time is shorter than a swap round
    /// trip.
    CostCompare {
        predicted_tool_s: f64,
        swap_round_trip_s: f64,
        choice: PreserveChoice,
    },
    /// Turn-blind release.
    Release,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditEvent {
    Decision {
        tool: String,
        detail: DecisionDetail,
    },
    Pin {
        pin: u64,
        /// `None` pins until the next turn arrives or the pin is victimized.
        expiry: Option<SimTime>,
        blocks: usize,
    },
    Unpin {
        pin: u64,
        cause: UnpinCause,
        program_arrival_s: SimTime,
        /// Program whose admission required the victim.
        #[serde(skip_serializing_if = "Option::is_none", default)]
        candidate: Option<String>,
        /// Latest program arrival among pins left in place.
        #[serde(skip_serializing_if = "Option::is_none", default)]
        latest_remaining_arrival_s: Option<SimTime>,
    },
    Release {
        action: ReleaseAction,
        blocks: usize,
        cause: ReleaseCause,
    },
    Preempt {
        request: RequestId,
        for_request: RequestId,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub time: SimTime,
    pub program: String,
    #[serde(skip)]
    pub program_index: ProgramId,
    #[serde(flatten)]
    pub event: AuditEvent,
}

#[derive(Debug, Clone, Default)]
pub struct AuditLog {
    records: Vec<AuditRecord>,
}

impl AuditLog {
    pub fn push(&mut self, time: SimTime, program_index: ProgramId, program: &str, event: AuditEvent) {
        self.records.push(AuditRecord {
            time,
            program: program.to_string(),
            program_index,
            event,
        });
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}
