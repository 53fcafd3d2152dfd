//! The event loop: replays a workload against one policy.

use serde::{Deserialize, Serialize};

use crate::audit::AuditLog;
use crate::baselines::InferceptConfig;
use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::metrics::{Diagnostics, MetricsCollector, ReportHeader, RunReport};
use crate::scheduler::{PolicyKind, Scheduler, SchedulerConfig};
use crate::sim::{BatchPlan, EngineConfig, EventKind, EventQueue, MemoryConfig, SimTime};
use crate::workload::{trace_hash, ProgramSpec};

/// Everything that determines a single run besides the workload and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub policy: PolicyKind,
    pub engine: EngineConfig,
    pub memory: MemoryConfig,
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub infercept: InferceptConfig,
    /// Let higher-priority waiting requests evict running ones.
    #[serde(default)]
    pub preemption: bool,
}

impl SimConfig {
    pub fn new(policy: PolicyKind, engine: EngineConfig, memory: MemoryConfig) -> Self {
        Self {
            policy,
            engine,
            memory,
            estimator: EstimatorConfig::default(),
            infercept: InferceptConfig::default(),
            preemption: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.engine.validate()?;
        self.memory.validate()?;
        self.estimator.validate()?;
        self.infercept.validate()
    }
}

/// What a finished run hands back.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub report: RunReport,
    pub audit: AuditLog,
}

struct InFlight {
    iteration: u64,
    plan: BatchPlan,
}

pub struct Simulation {
    config: SimConfig,
    seed: u64,
    trace_hash: String,
    events: EventQueue,
    scheduler: Scheduler,
    metrics: MetricsCollector,
    in_flight: Option<InFlight>,
    diagnostics: Diagnostics,
}

impl Simulation {
    /// Programs are replayed in arrival order. `seed` is recorded in the
    /// report; the simulation itself draws no random numbers.
    pub fn new(config: SimConfig, mut programs: Vec<ProgramSpec>, seed: u64) -> Result<Self> {
        config.validate()?;
        if programs.is_empty() {
            return Err(Error::EmptyRun);
        }
        for p in &programs {
            p.validate()
                .map_err(|m| Error::Config(format!("program {}: {m}", p.program_id)))?;
            let blocks = config.memory.blocks_for(p.context_tokens());
            if blocks > config.memory.gpu_capacity_blocks {
                return Err(Error::Config(format!(
                    "program {} needs {blocks} KV blocks but the GPU holds {}",
                    p.program_id, config.memory.gpu_capacity_blocks
                )));
            }
        }
        programs.sort_by(|a, b| a.arrival_time_s.total_cmp(&b.arrival_time_s));
        let trace_hash = trace_hash(&programs);
        let scheduler = Scheduler::new(
            config.policy.build(&config.infercept),
            SchedulerConfig {
                max_batch_requests: config.engine.max_batch_requests,
                preemption: config.preemption,
            },
            config.memory.clone(),
            config.estimator.clone(),
            &programs,
        );
        let metrics = MetricsCollector::new(
            programs
                .iter()
                .map(|p| (p.program_id.clone(), p.arrival_time_s, p.turns.len())),
        );
        let mut events = EventQueue::new();
        for (i, p) in programs.iter().enumerate() {
            events.push(p.arrival_time_s, EventKind::ProgramArrival { program: i })?;
        }
        Ok(Self {
            config,
            seed,
            trace_hash,
            events,
            scheduler,
            metrics,
            in_flight: None,
            diagnostics: Diagnostics::default(),
        })
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.scheduler
    }

    pub fn now(&self) -> SimTime {
        self.events.now()
    }

    /// Processes every event at the next timestamp, then lets the scheduler
    /// act. Returns false once the queue is drained.
    pub fn step(&mut self) -> Result<bool> {
        let Some(event) = self.events.advance() else {
            return Ok(false);
        };
        let now = event.time;
        self.handle(event.kind, now)?;
        while self.events.peek_time() == Some(now) {
            let event = self.events.advance().expect("peeked");
            self.handle(event.kind, now)?;
        }
        if self.in_flight.is_none() {
            let admitted = self.scheduler.schedule_step(now)?;
            for a in admitted {
                if a.ready_at > now {
                    self.events.push(a.ready_at, EventKind::SwapInComplete { request: a.request })?;
                }
            }
            self.start_iteration(now)?;
        }
        self.scheduler.memory().check()?;
        self.diagnostics.invariant_checks += 1;
        for e in self.scheduler.drain_lifecycle() {
            self.metrics.record(e)?;
        }
        Ok(true)
    }

    pub fn run(mut self) -> Result<SimOutput> {
        while self.step()? {}
        self.finish()
    }

    fn handle(&mut self, kind: EventKind, now: SimTime) -> Result<()> {
        self.diagnostics.events_processed += 1;
        match kind {
            EventKind::ProgramArrival { program } | EventKind::ToolCallComplete { program } => {
                let request = self.scheduler.make_request(program, now)?;
                self.scheduler.on_request_arrive(request, now)?;
            }
            // Only wakes the loop; the request is picked up by the next plan.
            EventKind::SwapInComplete { .. } => {}
            EventKind::PinExpiry { program, pin } => {
                if self.scheduler.pins().get(program).map(|e| e.id) == Some(pin) {
                    self.scheduler.release_expired_pins(now)?;
                }
            }
            EventKind::EngineIterationEnd { iteration } => {
                let flight = self.in_flight.take().filter(|f| f.iteration == iteration).ok_or_else(|| {
                    Error::Invariant(format!("iteration {iteration} ended but was not in flight"))
                })?;
                self.diagnostics.engine_busy_s += flight.plan.duration;
                for id in self.scheduler.apply_iteration(&flight.plan)? {
                    let outcome = self.scheduler.on_request_finish(id, now)?;
                    if let Some(t) = outcome.tool_return {
                        let program = self.scheduler.request(id).expect("finished").program;
                        self.events.push(t, EventKind::ToolCallComplete { program })?;
                    }
                    if let Some(pin) = outcome.pin.filter(|p| p.expiry.is_finite()) {
                        self.events.push(pin.expiry, EventKind::PinExpiry {
                            program: pin.program,
                            pin: pin.id,
                        })?;
                    }
                }
            }
        }
        Ok(())
    }

    fn start_iteration(&mut self, now: SimTime) -> Result<()> {
        let work = self.scheduler.ready_work(now);
        if work.is_empty() {
            return Ok(());
        }
        let plan = self.config.engine.plan_iteration(&work);
        if plan.is_empty() {
            return Ok(());
        }
        let iteration = self.diagnostics.iterations;
        self.diagnostics.iterations += 1;
        self.events.push(now + plan.duration, EventKind::EngineIterationEnd { iteration })?;
        self.in_flight = Some(InFlight { iteration, plan });
        Ok(())
    }

    fn finish(mut self) -> Result<SimOutput> {
        self.diagnostics.pins_created = self.scheduler.pins().created();
        let header = ReportHeader {
            policy: self.config.policy.label().to_string(),
            seed: self.seed,
            trace_hash: self.trace_hash,
            config: serde_json::to_value(&self.config)?,
        };
        let estimator = self.scheduler.estimator().dump();
        let mut report = self.metrics.finalize(header, estimator, self.diagnostics)?;
        let turns = &self.scheduler.estimator().turns;
        let issued: std::collections::HashMap<&str, u64> = (0..report.programs_total)
            .map(|i| (self.scheduler.program_label(i), turns.issued(i)))
            .collect();
        for p in &mut report.programs {
            p.requests_issued = issued[p.program_id.as_str()];
        }
        Ok(SimOutput {
            report,
            audit: self.scheduler.into_audit(),
        })
    }
}

/// Convenience wrapper: build and run.
pub fn simulate(config: SimConfig, programs: Vec<ProgramSpec>, seed: u64) -> Result<SimOutput> {
    Simulation::new(config, programs, seed)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::TurnSpec;

    fn engine() -> EngineConfig {
        EngineConfig {
            prefill_rate_tokens_per_s: 1000.0,
            decode_time_per_iteration_s: 0.01,
            decode_time_per_sequence_s: 0.0,
            max_batch_requests: 8,
            max_batch_tokens_per_iteration: 4096,
            chunked_prefill: false,
        }
    }

    fn memory(blocks: usize) -> MemoryConfig {
        MemoryConfig {
            gpu_capacity_blocks: blocks,
            block_size_tokens: 16,
            dram_capacity_blocks: 0,
            swap_bandwidth_blocks_per_s: 1000.0,
        }
    }

    #[test]
    fn single_turn_timeline() {
        let p = ProgramSpec {
            program_id: "a".into(),
            arrival_time_s: 1.0,
            turns: vec![TurnSpec::final_turn(100, 3)],
        };
        let out = simulate(SimConfig::new(PolicyKind::Fcfs, engine(), memory(64)), vec![p], 0).unwrap();
        let r = &out.report;
        assert!(r.complete);
        // 0.1 s prefill, then 3 decode iterations of 10 ms
        assert!((r.jct_mean_s - 0.13).abs() < 1e-9, "{}", r.jct_mean_s);
        assert_eq!(r.bubble_total_s, 0.0);
        assert_eq!(r.diagnostics.iterations, 4);
        assert_eq!(r.programs[0].requests_issued, 1);
    }

    #[test]
    fn pinned_program_keeps_kv_across_tool_call() {
        let p = ProgramSpec {
            program_id: "a".into(),
            arrival_time_s: 0.0,
            turns: vec![TurnSpec::with_tool(100, 2, "ls", 0.5), TurnSpec::final_turn(20, 2)],
        };
        let fcfs = simulate(SimConfig::new(PolicyKind::Fcfs, engine(), memory(64)), vec![p.clone()], 0).unwrap();
        let cont = simulate(SimConfig::new(PolicyKind::Continuum, engine(), memory(64)), vec![p], 0).unwrap();
        assert_eq!(fcfs.report.recomputed_prefill_tokens, 102);
        assert_eq!(cont.report.recomputed_prefill_tokens, 0);
        assert!(cont.report.jct_mean_s < fcfs.report.jct_mean_s);
    }

    #[test]
    fn oversized_program_is_rejected() {
        let p = ProgramSpec {
            program_id: "big".into(),
            arrival_time_s: 0.0,
            turns: vec![TurnSpec::final_turn(10_000, 1)],
        };
        let err = Simulation::new(SimConfig::new(PolicyKind::Fcfs, engine(), memory(8)), vec![p], 0);
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
