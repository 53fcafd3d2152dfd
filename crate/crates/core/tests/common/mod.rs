#![allow(dead_code)]

use agentsim::simulation::{simulate, SimConfig, SimOutput};
use agentsim::sim::{EngineConfig, MemoryConfig};
use agentsim::workload::{ProgramSpec, TurnSpec};
use agentsim::PolicyKind;

pub const BLOCK: usize = 16;

pub fn engine() -> EngineConfig {
    EngineConfig {
        prefill_rate_tokens_per_s: 10_000.0,
        decode_time_per_iteration_s: 0.02,
        decode_time_per_sequence_s: 0.0,
        max_batch_requests: 32,
        max_batch_tokens_per_iteration: 8192,
        chunked_prefill: false,
    }
}

pub fn memory(gpu_blocks: usize, dram_blocks: usize) -> MemoryConfig {
    MemoryConfig {
        gpu_capacity_blocks: gpu_blocks,
        block_size_tokens: BLOCK,
        dram_capacity_blocks: dram_blocks,
        swap_bandwidth_blocks_per_s: 1000.0,
    }
}

/// `turns` turns: a `first`-token prompt, then `response`-token tool
/// outputs; every turn decodes `decode` tokens; every tool takes `tool_s`.
pub fn program(id: &str, arrival: f64, turns: usize, first: usize, response: usize, decode: usize, tool: &str, tool_s: f64) -> ProgramSpec {
    let turns = (0..turns)
        .map(|i| {
            let prompt = if i == 0 { first } else { response };
            if i + 1 == turns {
                TurnSpec::final_turn(prompt, decode)
            } else {
                TurnSpec::with_tool(prompt, decode, tool, tool_s)
            }
        })
        .collect();
    ProgramSpec {
        program_id: id.to_string(),
        arrival_time_s: arrival,
        turns,
    }
}

/// The contention workload: 8 programs × 10 turns, 0.5 s tools, arrivals
/// 0.1 s apart, a 4000-token task prompt and 800-token tool outputs.
/// Returns the trace and a GPU size holding 4 full contexts.
pub fn contention_workload() -> (Vec<ProgramSpec>, usize) {
    let programs: Vec<ProgramSpec> = (0..8)
        .map(|i| program(&format!("p{i}"), i as f64 * 0.1, 10, 4000, 800, 50, "bash", 0.5))
        .collect();
    let blocks = programs[0].context_tokens().div_ceil(BLOCK) * 4;
    (programs, blocks)
}

pub fn run(policy: PolicyKind, programs: &[ProgramSpec], memory: MemoryConfig) -> SimOutput {
    simulate(SimConfig::new(policy, engine(), memory), programs.to_vec(), 0).expect("simulation failed")
}
