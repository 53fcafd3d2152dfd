use crate::audit::{AuditEvent, AuditLog, ReleaseAction, ReleaseCause, UnpinCause};
use crate::baselines::ServiceLedger;
use crate::error::{Error, Result};
use crate::estimator::{Estimator, EstimatorConfig};
use crate::metrics::LifecycleEvent;
use crate::sim::{
    AllocOutcome, BatchPlan, IterationWork, MemoryConfig, MemoryPool, ProgramId, RequestId,
    SimTime, SwapInOutcome, SwapOutOutcome,
};
use crate::workload::{ProgramSpec, TurnSpec};

use super::{
    Disposition, FinishContext, PinEntry, PinTable, Policy, PriorityInputs, QueueKey, Request,
    RequestState, WaitingQueue,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulerConfig {
    pub max_batch_requests: usize,
    pub preemption: bool,
}

/// A request admitted by [`Scheduler::schedule_step`]. It joins engine
/// iterations from `ready_at` (later than now while KV is copied back in).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Admission {
    pub request: RequestId,
    pub ready_at: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinishOutcome {
    pub program_done: bool,
    /// When the tool call returns and the next turn arrives.
    pub tool_return: Option<SimTime>,
    pub pin: Option<PinEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeadlockOutcome {
    /// The candidate fits; `victims` pins were released to get there.
    Resolved { victims: usize },
    /// Even with every eligible pin released the candidate doesn't fit.
    Impossible,
}

#[derive(Debug, Clone)]
struct ProgramState {
    label: String,
    arrival: SimTime,
    turns: Vec<TurnSpec>,
    next_turn: usize,
    context_tokens: usize,
    /// Tokens covered by the program's KV copy, wherever it lives.
    kv_tokens: usize,
    last_finish: Option<SimTime>,
}

enum ReleaseMode {
    Offload,
    Free,
}

pub struct Scheduler {
    policy: Box<dyn Policy>,
    config: SchedulerConfig,
    memory: MemoryPool,
    estimator: Estimator,
    ledger: ServiceLedger,
    pins: PinTable,
    queue: WaitingQueue,
    running: Vec<RequestId>,
    requests: Vec<Request>,
    programs: Vec<ProgramState>,
    audit: AuditLog,
    outbox: Vec<LifecycleEvent>,
}

impl Scheduler {
    pub fn new(
        policy: Box<dyn Policy>,
        config: SchedulerConfig,
        memory: MemoryConfig,
        estimator: EstimatorConfig,
        programs: &[ProgramSpec],
    ) -> Self {
        let programs = programs
            .iter()
            .map(|p| ProgramState {
                label: p.program_id.clone(),
                arrival: p.arrival_time_s,
                turns: p.turns.clone(),
                next_turn: 0,
                context_tokens: 0,
                kv_tokens: 0,
                last_finish: None,
            })
            .collect();
        Self {
            policy,
            config,
            memory: MemoryPool::new(memory),
            estimator: Estimator::new(estimator),
            ledger: ServiceLedger::default(),
            pins: PinTable::default(),
            queue: WaitingQueue::default(),
            running: Vec::new(),
            requests: Vec::new(),
            programs,
            audit: AuditLog::default(),
            outbox: Vec::new(),
        }
    }

    pub fn policy(&self) -> &dyn Policy {
        self.policy.as_ref()
    }

    pub fn memory(&self) -> &MemoryPool {
        &self.memory
    }

    pub fn estimator(&self) -> &Estimator {
        &self.estimator
    }

    pub fn pins(&self) -> &PinTable {
        &self.pins
    }

    pub fn queue(&self) -> &WaitingQueue {
        &self.queue
    }

    pub fn running(&self) -> &[RequestId] {
        &self.running
    }

    pub fn request(&self, id: RequestId) -> Option<&Request> {
        self.requests.get(id)
    }

    pub fn service(&self) -> &ServiceLedger {
        &self.ledger
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn into_audit(self) -> AuditLog {
        self.audit
    }

    pub fn program_label(&self, program: ProgramId) -> &str {
        &self.programs[program].label
    }

    /// Lifecycle events produced since the last drain, in time order.
    pub fn drain_lifecycle(&mut self) -> Vec<LifecycleEvent> {
        std::mem::take(&mut self.outbox)
    }

    fn program(&self, program: ProgramId) -> Result<&ProgramState> {
        self.programs
            .get(program)
            .ok_or_else(|| Error::Invariant(format!("unknown program {program}")))
    }

    fn req(&self, id: RequestId) -> Result<&Request> {
        self.requests
            .get(id)
            .ok_or_else(|| Error::Invariant(format!("unknown request {id}")))
    }

    fn audit_push(&mut self, time: SimTime, program: ProgramId, event: AuditEvent) {
        let label = &self.programs[program].label;
        self.audit.push(time, program, label, event);
    }

    /// Builds the program's next turn as a request arriving at `now`.
    pub fn make_request(&mut self, program: ProgramId, now: SimTime) -> Result<Request> {
        let state = self.program(program)?;
        let turn = state.turns.get(state.next_turn).ok_or_else(|| {
            Error::Invariant(format!("program {} has no turn {}", state.label, state.next_turn))
        })?;
        Ok(Request::new(
            self.requests.len(),
            program,
            state.next_turn,
            state.context_tokens,
            turn.new_prompt_tokens,
            turn.decode_tokens,
            now,
        ))
    }

    pub fn on_request_arrive(&mut self, request: Request, now: SimTime) -> Result<RequestId> {
        if request.id != self.requests.len() {
            return Err(Error::Invariant(format!(
                "request id {} out of sequence (expected {})",
                request.id,
                self.requests.len()
            )));
        }
        if request.state != RequestState::Waiting {
            return Err(Error::Invariant(format!("request {} arrived {:?}", request.id, request.state)));
        }
        let p = request.program;
        let state = self.programs.get_mut(p).ok_or_else(|| Error::Invariant(format!("unknown program {p}")))?;
        if request.turn_index != state.next_turn {
            return Err(Error::Invariant(format!(
                "program {} turn {} arrived, expected {}",
                state.label, request.turn_index, state.next_turn
            )));
        }
        state.next_turn += 1;
        if request.turn_index > 0 {
            if let Some(finish) = state.last_finish {
                let tool = state.turns[request.turn_index - 1].tool_name.as_deref().unwrap_or_default();
                self.estimator.record_interval(tool, now - finish);
            }
        }
        self.estimator.turns.on_request_issued(p);
        let id = request.id;
        self.outbox.push(LifecycleEvent::TurnArrived {
            time: now,
            program: p,
            turn: request.turn_index,
        });
        self.queue.push(id, p);
        self.requests.push(request);
        Ok(id)
    }

    /// Running requests whose KV is in place, in admission order.
    pub fn ready_work(&self, now: SimTime) -> Vec<IterationWork> {
        self.running
            .iter()
            .map(|&id| &self.requests[id])
            .filter(|r| r.ready_at <= now)
            .map(|r| IterationWork {
                request: r.id,
                prefill_remaining: r.prefill_remaining,
                decode_remaining: r.decode_tokens - r.decode_done,
            })
            .collect()
    }

    /// Applies a completed iteration; returns requests that decoded their
    /// last token, in plan order.
    pub fn apply_iteration(&mut self, plan: &BatchPlan) -> Result<Vec<RequestId>> {
        let mut finished = Vec::new();
        for w in &plan.work {
            let r = self.req(w.request)?;
            if r.state != RequestState::Running || self.memory.gpu_blocks(r.program) == 0 {
                return Err(Error::Invariant(format!(
                    "iteration touched request {} in state {:?} without GPU blocks",
                    r.id, r.state
                )));
            }
            let program = r.program;
            self.ledger.credit(program, plan.duration);
            let r = &mut self.requests[w.request];
            r.busy_s += plan.duration;
            r.prefill_remaining = r.prefill_remaining.checked_sub(w.prefill_tokens).ok_or_else(|| {
                Error::Invariant(format!("request {} over-prefilled", w.request))
            })?;
            if w.decodes {
                r.decode_done += 1;
                if r.decode_done == r.decode_tokens {
                    finished.push(r.id);
                }
            }
        }
        Ok(finished)
    }

    pub fn on_request_finish(&mut self, id: RequestId, now: SimTime) -> Result<FinishOutcome> {
        let r = self.req(id)?;
        if r.state != RequestState::Running || r.decode_done != r.decode_tokens || r.prefill_remaining != 0 {
            return Err(Error::Invariant(format!("request {id} finished early ({:?})", r.state)));
        }
        let (p, turn_index, final_tokens) = (r.program, r.turn_index, r.final_tokens());
        let first = r.first_scheduled_time.unwrap_or(now);
        let stall = ((now - first) - r.busy_s - r.preemption_stall_s).max(0.0);
        let (busy, preempt_stall) = (r.busy_s, r.preemption_stall_s);
        self.requests[id].state = RequestState::Finished;
        self.running.retain(|&x| x != id);

        let state = &mut self.programs[p];
        state.context_tokens = final_tokens;
        state.kv_tokens = final_tokens;
        state.last_finish = Some(now);
        let turn = state.turns[turn_index].clone();
        let is_last = turn_index + 1 == state.turns.len();
        self.outbox.push(LifecycleEvent::TurnFinished {
            time: now,
            program: p,
            turn: turn_index,
            busy_s: busy,
            stall_s: stall,
            preemption_stall_s: preempt_stall,
            tool_duration_s: turn.tool_duration_s,
        });

        if is_last {
            if let Some(pin) = self.pins.remove(p) {
                self.audit_unpin(now, &pin, UnpinCause::ProgramDone, None, None);
            }
            let blocks = self.memory.free_blocks(p) + self.memory.free_dram(p);
            self.audit_push(now, p, AuditEvent::Release {
                action: ReleaseAction::Free,
                blocks,
                cause: ReleaseCause::ProgramDone,
            });
            self.programs[p].kv_tokens = 0;
            let turns = self.programs[p].turns.len();
            self.estimator.turns.on_program_complete(turns);
            self.outbox.push(LifecycleEvent::ProgramCompleted { time: now, program: p });
            return Ok(FinishOutcome {
                program_done: true,
                tool_return: None,
                pin: None,
            });
        }

        let tool = turn.tool_name.clone().unwrap_or_default();
        let duration = turn.tool_duration_s.unwrap_or(0.0);
        let kv_blocks = self.memory.gpu_blocks(p);
        let decision = self.policy.on_finish(&FinishContext {
            now,
            program: p,
            tool: &tool,
            estimator: &self.estimator,
            kv_blocks,
            kv_tokens: final_tokens,
            memory: self.memory.config(),
            dram_free_blocks: self.memory.dram_free(),
        });
        self.audit_push(now, p, AuditEvent::Decision {
            tool,
            detail: decision.detail,
        });
        let mut pin = None;
        match decision.disposition {
            Disposition::Pin { expiry } if expiry > now => {
                let entry = self.pins.insert(p, expiry, kv_blocks);
                self.audit_push(now, p, AuditEvent::Pin {
                    pin: entry.id,
                    expiry: expiry.is_finite().then_some(expiry),
                    blocks: kv_blocks,
                });
                pin = Some(entry);
            }
            Disposition::Pin { .. } | Disposition::Offload => {
                self.release(p, ReleaseMode::Offload, ReleaseCause::Finish, now)?
            }
            Disposition::Free => self.release(p, ReleaseMode::Free, ReleaseCause::Finish, now)?,
        }
        Ok(FinishOutcome {
            program_done: false,
            tool_return: Some(now + duration),
            pin,
        })
    }

    fn audit_unpin(
        &mut self,
        now: SimTime,
        pin: &PinEntry,
        cause: UnpinCause,
        candidate: Option<String>,
        latest_remaining_arrival_s: Option<SimTime>,
    ) {
        let program_arrival_s = self.programs[pin.program].arrival;
        self.audit_push(now, pin.program, AuditEvent::Unpin {
            pin: pin.id,
            cause,
            program_arrival_s,
            candidate,
            latest_remaining_arrival_s,
        });
    }

    /// Moves the program's GPU blocks off the GPU: to host memory when
    /// offloading and the tier has room, otherwise discards them.
    fn release(&mut self, p: ProgramId, mode: ReleaseMode, cause: ReleaseCause, now: SimTime) -> Result<()> {
        if self.memory.gpu_blocks(p) == 0 {
            return Ok(());
        }
        let (action, blocks) = match mode {
            ReleaseMode::Offload if self.memory.config().offload_enabled() => {
                match self.memory.swap_out(p, now)? {
                    SwapOutOutcome::Swapped { blocks, .. } => (ReleaseAction::Swap, blocks),
                    SwapOutOutcome::Evicted { blocks } => (ReleaseAction::EvictFallback, blocks),
                }
            }
            _ => (ReleaseAction::Free, self.memory.free_blocks(p)),
        };
        if action != ReleaseAction::Swap {
            self.programs[p].kv_tokens = 0;
        }
        self.audit_push(now, p, AuditEvent::Release { action, blocks, cause });
        self.outbox.push(LifecycleEvent::Released {
            time: now,
            program: p,
            action,
            blocks,
        });
        Ok(())
    }

    /// Releases pins whose TTL has run out and whose program has nothing
    /// waiting. Returns how many were released.
    pub fn release_expired_pins(&mut self, now: SimTime) -> Result<usize> {
        let expired: Vec<ProgramId> = self
            .pins
            .iter()
            .filter(|e| now >= e.expiry && !self.queue.contains_program(e.program))
            .map(|e| e.program)
            .collect();
        for &p in &expired {
            let pin = self.pins.remove(p).expect("listed above");
            self.audit_unpin(now, &pin, UnpinCause::Expired, None, None);
            self.release(p, ReleaseMode::Offload, ReleaseCause::Expired, now)?;
        }
        Ok(expired.len())
    }

    fn inputs(&self, r: &Request) -> PriorityInputs {
        PriorityInputs {
            preempted: r.is_preempted(),
            pinned: self.pins.contains(r.program),
            program_arrival: self.programs[r.program].arrival,
            request_arrival: r.engine_arrival_time,
            program_service_s: self.ledger.get(r.program),
            sequence: r.id as u64,
        }
    }

    pub fn priority_of(&self, id: RequestId) -> Option<QueueKey> {
        self.requests.get(id).map(|r| self.policy.priority(&self.inputs(r)))
    }

    fn top_candidate(&self) -> Option<RequestId> {
        self.queue
            .iter()
            .min_by_key(|&id| self.policy.priority(&self.inputs(&self.requests[id])))
    }

    /// Extra GPU blocks the request needs to hold its full turn.
    pub fn blocks_needed(&self, id: RequestId) -> usize {
        let r = &self.requests[id];
        self.memory
            .blocks_for(r.final_tokens())
            .saturating_sub(self.memory.gpu_blocks(r.program))
    }

    fn fits(&self, id: RequestId) -> bool {
        self.blocks_needed(id) <= self.memory.gpu_free()
    }

    /// Admits waiting requests in priority order until the batch is full or
    /// the top candidate can't get memory.
    pub fn schedule_step(&mut self, now: SimTime) -> Result<Vec<Admission>> {
        self.release_expired_pins(now)?;
        let mut admitted: Vec<Admission> = Vec::new();
        while self.running.len() < self.config.max_batch_requests {
            let Some(cand) = self.top_candidate() else { break };
            if !self.fits(cand) {
                if self.config.preemption {
                    self.preempt_for(cand, now, &admitted)?;
                }
                // Only break pins when the engine would otherwise idle.
                if !self.fits(cand) && admitted.is_empty() && self.running.is_empty() {
                    self.resolve_deadlock(cand, now)?;
                }
                if !self.fits(cand) {
                    break;
                }
            }
            admitted.push(self.admit(cand, now)?);
        }
        Ok(admitted)
    }

    /// Releases pins of other programs, latest-arriving program first, until
    /// the candidate fits.
    pub fn resolve_deadlock(&mut self, cand: RequestId, now: SimTime) -> Result<DeadlockOutcome> {
        let cand_program = self.req(cand)?.program;
        let mut victims = 0;
        while !self.fits(cand) {
            let arrival = |e: &PinEntry| self.programs[e.program].arrival;
            let victim = self
                .pins
                .iter()
                .filter(|e| e.program != cand_program)
                .max_by(|a, b| arrival(a).total_cmp(&arrival(b)).then(a.program.cmp(&b.program)))
                .copied();
            let Some(victim) = victim else {
                return Ok(DeadlockOutcome::Impossible);
            };
            self.pins.remove(victim.program);
            let latest_remaining = self
                .pins
                .iter()
                .filter(|e| e.program != cand_program)
                .map(|e| self.programs[e.program].arrival)
                .max_by(f64::total_cmp);
            let candidate = Some(self.programs[cand_program].label.clone());
            self.audit_unpin(now, &victim, UnpinCause::Victim, candidate, latest_remaining);
            self.release(victim.program, ReleaseMode::Offload, ReleaseCause::Victim, now)?;
            victims += 1;
        }
        Ok(DeadlockOutcome::Resolved { victims })
    }

    fn running_key(&self, id: RequestId) -> QueueKey {
        let mut inputs = self.inputs(&self.requests[id]);
        inputs.preempted = false;
        inputs.pinned = true;
        self.policy.priority(&inputs).base()
    }

    /// Preempts running requests of strictly lower priority, lowest first,
    /// until the candidate fits or none is left.
    fn preempt_for(&mut self, cand: RequestId, now: SimTime, admitted: &[Admission]) -> Result<()> {
        let cand_key = self.policy.priority(&self.inputs(&self.requests[cand])).base();
        while !self.fits(cand) {
            let victim = self
                .running
                .iter()
                .copied()
                .filter(|&id| !admitted.iter().any(|a| a.request == id))
                .map(|id| (self.running_key(id), id))
                .max();
            match victim {
                Some((key, id)) if key > cand_key => self.preempt(id, cand, now)?,
                _ => break,
            }
        }
        Ok(())
    }

    fn preempt(&mut self, victim: RequestId, for_request: RequestId, now: SimTime) -> Result<()> {
        self.running.retain(|&x| x != victim);
        let r = &mut self.requests[victim];
        r.state = RequestState::Preempted;
        r.preempted_at = Some(now);
        let kv = r.kv_tokens();
        r.known_tokens = r.known_tokens.max(kv);
        let p = r.program;
        self.programs[p].kv_tokens = kv;
        self.audit_push(now, p, AuditEvent::Preempt {
            request: victim,
            for_request,
        });
        self.outbox.push(LifecycleEvent::Preempted { time: now, program: p });
        self.release(p, ReleaseMode::Offload, ReleaseCause::Preempt, now)?;
        self.queue.push(victim, p);
        Ok(())
    }

    fn admit(&mut self, id: RequestId, now: SimTime) -> Result<Admission> {
        let p = self.req(id)?.program;
        self.queue.remove(id, p);
        if let Some(pin) = self.pins.remove(p) {
            self.audit_unpin(now, &pin, UnpinCause::Admitted, None, None);
        }
        let mut cached = 0;
        let mut ready_at = now;
        if self.memory.gpu_blocks(p) > 0 {
            cached = self.programs[p].kv_tokens;
        } else if self.memory.dram_blocks(p) > 0 {
            match self.memory.swap_in(p, now)? {
                SwapInOutcome::Loaded { blocks, done_at } => {
                    ready_at = done_at;
                    cached = self.programs[p].kv_tokens;
                    self.outbox.push(LifecycleEvent::SwappedIn {
                        time: now,
                        program: p,
                        blocks,
                    });
                }
                SwapInOutcome::Insufficient { needed, free } => {
                    return Err(Error::Invariant(format!(
                        "admitted request {id} cannot swap in {needed} blocks ({free} free)"
                    )))
                }
            }
        }
        let target = self.requests[id].final_tokens();
        if let AllocOutcome::Insufficient { needed, free } = self.memory.reserve(p, target) {
            return Err(Error::Invariant(format!(
                "admitted request {id} needs {needed} blocks, {free} free"
            )));
        }
        let r = &mut self.requests[id];
        let live = r.live_context();
        let cached = cached.min(live);
        r.cached_context_tokens = cached;
        r.prefill_remaining = live - cached;
        let recomputed = r.known_tokens.saturating_sub(cached);
        r.known_tokens = r.known_tokens.max(live);
        if r.first_scheduled_time.is_none() {
            r.first_scheduled_time = Some(now);
        }
        if let Some(t) = r.preempted_at.take() {
            r.preemption_stall_s += now - t;
        }
        r.state = RequestState::Running;
        r.ready_at = ready_at;
        let turn = r.turn_index;
        self.running.push(id);
        self.outbox.push(LifecycleEvent::TurnAdmitted {
            time: now,
            program: p,
            turn,
            recomputed_tokens: recomputed,
        });
        Ok(Admission { request: id, ready_at })
    }
}
