//! Event-sourced run measurement: job completion time, throughput and
//! scheduling-bubble time.
//!
//! The bubble of a turn is the time between its arrival at the engine and
//! its first admission. Every completed program is checked against the
//! accounting identity
//! `jct = bubbles + engine busy + admitted-but-stalled + preemption gaps + tool time`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::audit::ReleaseAction;
use crate::error::{Error, Result};
use crate::estimator::EstimatorDump;
use crate::sim::{ProgramId, SimTime};

#[derive(Debug, Clone, PartialEq)]
pub enum LifecycleEvent {
    TurnArrived {
        time: SimTime,
        program: ProgramId,
        turn: usize,
    },
    TurnAdmitted {
        time: SimTime,
        program: ProgramId,
        turn: usize,
        recomputed_tokens: usize,
    },
    SwappedIn {
        time: SimTime,
        program: ProgramId,
        blocks: usize,
    },
    Released {
        time: SimTime,
        program: ProgramId,
        action: ReleaseAction,
        blocks: usize,
    },
    Preempted {
        time: SimTime,
        program: ProgramId,
    },
    TurnFinished {
        time: SimTime,
        program: ProgramId,
        turn: usize,
        busy_s: f64,
        stall_s: f64,
        preemption_stall_s: f64,
        tool_duration_s: Option<f64>,
    },
    ProgramCompleted {
        time: SimTime,
        program: ProgramId,
    },
}

impl LifecycleEvent {
    pub fn time(&self) -> SimTime {
        match *self {
            LifecycleEvent::TurnArrived { time, .. }
            | LifecycleEvent::TurnAdmitted { time, .. }
            | LifecycleEvent::SwappedIn { time, .. }
            | LifecycleEvent::Released { time, .. }
            | LifecycleEvent::Preempted { time, .. }
            | LifecycleEvent::TurnFinished { time, .. }
            | LifecycleEvent::ProgramCompleted { time, .. } => time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramOutcome {
    pub program_id: String,
    pub arrival_time: SimTime,
    pub completion_time: Option<SimTime>,
    pub jct: Option<f64>,
    pub total_bubble_s: f64,
    pub turns: usize,
    pub turns_completed: usize,
    /// Requests issued to the engine for this program, m(r) at the end.
    pub requests_issued: u64,
    pub engine_busy_s: f64,
    pub stall_s: f64,
    pub preemption_stall_s: f64,
    pub tool_time_s: f64,
    pub recomputed_prefill_tokens: usize,
    pub swapped_blocks_in: usize,
    pub swapped_blocks_out: usize,
    pub evict_fallbacks: usize,
    pub preemptions: usize,
    /// Per-turn bubbles in turn order.
    pub turn_bubbles_s: Vec<f64>,
}

#[derive(Debug, Clone)]
struct TurnTrack {
    arrival: SimTime,
    first_admitted: Option<SimTime>,
}

#[derive(Debug, Clone)]
struct ProgramTrack {
    outcome: ProgramOutcome,
    current: Option<TurnTrack>,
    request_latency_sum: f64,
}

/// Per-run counters that don't belong to any one program.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub events_processed: u64,
    pub iterations: u64,
    pub invariant_checks: u64,
    pub pins_created: u64,
    pub engine_busy_s: f64,
}

pub struct MetricsCollector {
    programs: Vec<ProgramTrack>,
    last_time: SimTime,
    requests_finished: u64,
}

impl MetricsCollector {
    /// `programs` lists `(label, arrival time, turn count)` by program index.
    pub fn new(programs: impl IntoIterator<Item = (String, SimTime, usize)>) -> Self {
        let programs = programs
            .into_iter()
            .map(|(label, arrival, turns)| ProgramTrack {
                outcome: ProgramOutcome {
                    program_id: label,
                    arrival_time: arrival,
                    completion_time: None,
                    jct: None,
                    total_bubble_s: 0.0,
                    turns,
                    turns_completed: 0,
                    requests_issued: 0,
                    engine_busy_s: 0.0,
                    stall_s: 0.0,
                    preemption_stall_s: 0.0,
                    tool_time_s: 0.0,
                    recomputed_prefill_tokens: 0,
                    swapped_blocks_in: 0,
                    swapped_blocks_out: 0,
                    evict_fallbacks: 0,
                    preemptions: 0,
                    turn_bubbles_s: Vec::with_capacity(turns),
                },
                current: None,
                request_latency_sum: 0.0,
            })
            .collect();
        Self {
            programs,
            last_time: 0.0,
            requests_finished: 0,
        }
    }

    fn track(&mut self, program: ProgramId) -> Result<&mut ProgramTrack> {
        self.programs
            .get_mut(program)
            .ok_or_else(|| Error::Invariant(format!("metrics: unknown program {program}")))
    }

    pub fn record(&mut self, event: LifecycleEvent) -> Result<()> {
        let time = event.time();
        if time < self.last_time {
            return Err(Error::Invariant(format!(
                "metrics: event at {time} after {}",
                self.last_time
            )));
        }
        self.last_time = time;
        match event {
            LifecycleEvent::TurnArrived { program, .. } => {
                self.track(program)?.current = Some(TurnTrack {
                    arrival: time,
                    first_admitted: None,
                });
            }
            LifecycleEvent::TurnAdmitted {
                program,
                recomputed_tokens,
                ..
            } => {
                let t = self.track(program)?;
                t.outcome.recomputed_prefill_tokens += recomputed_tokens;
                let turn = t
                    .current
                    .as_mut()
                    .ok_or_else(|| Error::Invariant("admission without arrival".into()))?;
                if turn.first_admitted.is_none() {
                    turn.first_admitted = Some(time);
                    let bubble = time - turn.arrival;
                    t.outcome.total_bubble_s += bubble;
                    t.outcome.turn_bubbles_s.push(bubble);
                }
            }
            LifecycleEvent::SwappedIn { program, blocks, .. } => {
                self.track(program)?.outcome.swapped_blocks_in += blocks;
            }
            LifecycleEvent::Released {
                program,
                action,
                blocks,
                ..
            } => {
                let o = &mut self.track(program)?.outcome;
                match action {
                    ReleaseAction::Swap => o.swapped_blocks_out += blocks,
                    ReleaseAction::EvictFallback => o.evict_fallbacks += 1,
                    ReleaseAction::Free => {}
                }
            }
            LifecycleEvent::Preempted { program, .. } => {
                self.track(program)?.outcome.preemptions += 1;
            }
            LifecycleEvent::TurnFinished {
                program,
                busy_s,
                stall_s,
                preemption_stall_s,
                tool_duration_s,
                ..
            } => {
                self.requests_finished += 1;
                let t = self.track(program)?;
                let turn = t
                    .current
                    .take()
                    .ok_or_else(|| Error::Invariant("finish without arrival".into()))?;
                t.request_latency_sum += time - turn.arrival;
                let o = &mut t.outcome;
                o.turns_completed += 1;
                o.engine_busy_s += busy_s;
                o.stall_s += stall_s;
                o.preemption_stall_s += preemption_stall_s;
                o.tool_time_s += tool_duration_s.unwrap_or(0.0);
            }
            LifecycleEvent::ProgramCompleted { program, .. } => {
                let o = &mut self.track(program)?.outcome;
                let jct = time - o.arrival_time;
                o.completion_time = Some(time);
                o.jct = Some(jct);
                let parts = o.total_bubble_s + o.engine_busy_s + o.stall_s + o.preemption_stall_s + o.tool_time_s;
                if (parts - jct).abs() > 1e-9 * jct.abs().max(1.0) {
                    return Err(Error::Invariant(format!(
                        "program {}: jct {jct} != bubble+busy+stall+preempt+tool {parts}",
                        o.program_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn finalize(self, header: ReportHeader, estimator: EstimatorDump, diagnostics: Diagnostics) -> Result<RunReport> {
        if self.programs.is_empty() {
            return Err(Error::EmptyRun);
        }
        let total_requests: usize = self.programs.iter().map(|p| p.outcome.turns_completed).sum();
        let latency_sum: f64 = self.programs.iter().map(|p| p.request_latency_sum).sum();
        let outcomes: Vec<ProgramOutcome> = self.programs.into_iter().map(|p| p.outcome).collect();
        let mut jcts: Vec<f64> = outcomes.iter().filter_map(|o| o.jct).collect();
        jcts.sort_by(f64::total_cmp);
        let completed = jcts.len();
        let first_arrival = outcomes.iter().map(|o| o.arrival_time).fold(f64::INFINITY, f64::min);
        let last_completion = outcomes
            .iter()
            .filter_map(|o| o.completion_time)
            .fold(f64::NEG_INFINITY, f64::max);
        let makespan = if completed > 0 { last_completion - first_arrival } else { 0.0 };
        let done: Vec<&ProgramOutcome> = outcomes.iter().filter(|o| o.jct.is_some()).collect();
        let sum = |f: fn(&ProgramOutcome) -> f64| done.iter().map(|o| f(o)).sum::<f64>();
        let mean_of = |total: f64| if completed > 0 { total / completed as f64 } else { 0.0 };

        Ok(RunReport {
            policy: header.policy,
            seed: header.seed,
            trace_hash: header.trace_hash,
            config: header.config,
            programs_total: outcomes.len(),
            programs_completed: completed,
            complete: completed == outcomes.len(),
            makespan_s: makespan,
            throughput_jobs_per_s: if makespan > 0.0 { completed as f64 / makespan } else { 0.0 },
            jct_mean_s: mean_of(jcts.iter().sum()),
            jct_median_s: median(&jcts),
            jct_p99_s: percentile(&jcts, 0.99),
            request_latency_mean_s: if total_requests > 0 { latency_sum / total_requests as f64 } else { 0.0 },
            bubble_mean_s: mean_of(sum(|o| o.total_bubble_s)),
            bubble_total_s: outcomes.iter().map(|o| o.total_bubble_s).sum(),
            recomputed_prefill_tokens: outcomes.iter().map(|o| o.recomputed_prefill_tokens).sum(),
            swapped_blocks_in: outcomes.iter().map(|o| o.swapped_blocks_in).sum(),
            swapped_blocks_out: outcomes.iter().map(|o| o.swapped_blocks_out).sum(),
            evict_fallbacks: outcomes.iter().map(|o| o.evict_fallbacks).sum(),
            preemptions: outcomes.iter().map(|o| o.preemptions).sum(),
            estimator,
            diagnostics,
            programs: outcomes,
        })
    }
}

fn median(sorted: &[f64]) -> f64 {
    match sorted.len() {
        0 => 0.0,
        n if n % 2 == 1 => sorted[n / 2],
        n => (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0,
    }
}

// nearest-rank
fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub struct ReportHeader {
    pub policy: String,
    pub seed: u64,
    pub trace_hash: String,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub policy: String,
    pub seed: u64,
    pub trace_hash: String,
    pub config: serde_json::Value,
    pub programs_total: usize,
    pub programs_completed: usize,
    pub complete: bool,
    pub makespan_s: f64,
    pub throughput_jobs_per_s: f64,
    pub jct_mean_s: f64,
    pub jct_median_s: f64,
    pub jct_p99_s: f64,
    pub request_latency_mean_s: f64,
    pub bubble_mean_s: f64,
    pub bubble_total_s: f64,
    pub recomputed_prefill_tokens: usize,
    pub swapped_blocks_in: usize,
    pub swapped_blocks_out: usize,
    pub evict_fallbacks: usize,
    pub preemptions: usize,
    pub estimator: EstimatorDump,
    pub diagnostics: Diagnostics,
    pub programs: Vec<ProgramOutcome>,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per program: id, arrival, completion, jct, bubble, turns.
    pub fn write_programs_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["program_id", "arrival", "completion", "jct", "bubble", "turns"])?;
        for p in &self.programs {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([
                p.program_id.clone(),
                p.arrival_time.to_string(),
                opt(p.completion_time),
                opt(p.jct),
                p.total_bubble_s.to_string(),
                p.turns.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub policy: String,
    pub jct_mean_s: f64,
    pub jct_p99_s: f64,
    pub throughput_jobs_per_s: f64,
    pub bubble_mean_s: f64,
    /// Baseline mean JCT over this policy's; above 1 means faster.
    pub jct_speedup: f64,
    /// This policy's throughput over the baseline's.
    pub throughput_ratio: f64,
    /// Baseline mean bubble over this policy's.
    pub bubble_reduction: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == den {
        1.0
    } else {
        num / den
    }
}

/// Ratios of each report against the one labelled `baseline`. All reports
/// must come from the same trace.
pub fn compare(reports: &[RunReport], baseline: &str) -> Result<Vec<ComparisonRow>> {
    let base = reports
        .iter()
        .find(|r| r.policy == baseline)
        .ok_or_else(|| Error::Config(format!("baseline policy `{baseline}` not among reports")))?;
    if let Some(r) = reports.iter().find(|r| r.trace_hash != base.trace_hash) {
        return Err(Error::TraceMismatch {
            left: base.trace_hash.clone(),
            right: r.trace_hash.clone(),
        });
    }
    Ok(reports
        .iter()
        .map(|r| ComparisonRow {
            policy: r.policy.clone(),
            jct_mean_s: r.jct_mean_s,
            jct_p99_s: r.jct_p99_s,
            throughput_jobs_per_s: r.throughput_jobs_per_s,
            bubble_mean_s: r.bubble_mean_s,
            jct_speedup: ratio(base.jct_mean_s, r.jct_mean_s),
            throughput_ratio: ratio(r.throughput_jobs_per_s, base.throughput_jobs_per_s),
            bubble_reduction: ratio(base.bubble_mean_s, r.bubble_mean_s),
        })
        .collect())
}
