use serde::{Deserialize, Serialize};

use crate::sim::{ProgramId, RequestId, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestState {
    Waiting,
    Running,
    Preempted,
    Finished,
}

/// One LLM turn inside the engine.
#[derive(Debug, Clone)]
pub struct Request {
    pub id: RequestId,
    pub program: ProgramId,
    pub turn_index: usize,
    /// Full prefix including this turn's prompt.
    pub total_context_tokens: usize,
    pub new_prompt_tokens: usize,
    /// Tokens whose KV was on hand (GPU or reloaded) at the last admission.
    pub cached_context_tokens: usize,
    pub decode_tokens: usize,
    pub decode_done: usize,
    pub prefill_remaining: usize,
    pub state: RequestState,
    pub engine_arrival_time: SimTime,
    pub first_scheduled_time: Option<SimTime>,
    /// KV reload completes at this time; the request joins iterations after.
    pub ready_at: SimTime,
    /// Tokens whose KV has been computed at some point for this request's
    /// prefix; anything below this that must be prefilled again is
    /// recomputation.
    pub(crate) known_tokens: usize,
    pub(crate) preempted_at: Option<SimTime>,
    pub busy_s: f64,
    pub preemption_stall_s: f64,
}

impl Request {
    pub fn new(
        id: RequestId,
        program: ProgramId,
        turn_index: usize,
        prior_context_tokens: usize,
        new_prompt_tokens: usize,
        decode_tokens: usize,
        now: SimTime,
    ) -> Self {
        Self {
            id,
            program,
            turn_index,
            total_context_tokens: prior_context_tokens + new_prompt_tokens,
            new_prompt_tokens,
            cached_context_tokens: 0,
            decode_tokens,
            decode_done: 0,
            prefill_remaining: 0,
            state: RequestState::Waiting,
            engine_arrival_time: now,
            first_scheduled_time: None,
            ready_at: now,
            known_tokens: prior_context_tokens,
            preempted_at: None,
            busy_s: 0.0,
            preemption_stall_s: 0.0,
        }
    }

    /// KV footprint once this turn has decoded everything.
    pub fn final_tokens(&self) -> usize {
        self.total_context_tokens + self.decode_tokens
    }

    /// Tokens the engine must hold KV for before decoding can resume.
    pub fn live_context(&self) -> usize {
        self.total_context_tokens + self.decode_done
    }

    /// Tokens with valid KV right now.
    pub fn kv_tokens(&self) -> usize {
        self.live_context() - self.prefill_remaining
    }

    pub fn is_preempted(&self) -> bool {
        self.state == RequestState::Preempted
    }

    pub fn bubble(&self) -> Option<f64> {
        self.first_scheduled_time.map(|t| t - self.engine_arrival_time)
    }
}
