use super::{ProgramSpec, TurnSpec};

/// Placeholder tool for single-turn programs stretched to several turns.
const REPEAT_TOOL: &str = "repeat";

/// Repeats each program's turn list `k` times and divides every token count
/// by `k` (floor, minimum 1), keeping total volume roughly constant while
/// multiplying the number of turns.
///
/// Inner copies of the final turn need a tool call; they reuse the
/// program's last tool (or a zero-length `repeat` call if it has none).
pub fn turn_scaling_transform(trace: &[ProgramSpec], k: usize) -> Vec<ProgramSpec> {
    let k = k.max(1);
    if k == 1 {
        return trace.to_vec();
    }
    trace
        .iter()
        .map(|program| {
            let last_tool = program
                .turns
                .iter()
                .rev()
                .find_map(|t| Some((t.tool_name.clone()?, t.tool_duration_s?)))
                .unwrap_or_else(|| (REPEAT_TOOL.to_string(), 0.0));
            let n = program.turns.len();
            let mut turns = Vec::with_capacity(n * k);
            for copy in 0..k {
                for (i, turn) in program.turns.iter().enumerate() {
                    let mut scaled = TurnSpec {
                        new_prompt_tokens: (turn.new_prompt_tokens / k).max(1),
                        decode_tokens: (turn.decode_tokens / k).max(1),
                        ..turn.clone()
                    };
                    let is_final_copy = i == n - 1;
                    if is_final_copy && copy + 1 < k {
                        scaled.tool_name = Some(last_tool.0.clone());
                        scaled.tool_duration_s = Some(last_tool.1);
                    }
                    turns.push(scaled);
                }
            }
            ProgramSpec {
                turns,
                ..program.clone()
            }
        })
        .collect()
}

/// Multiplies token counts by `factor` (rounded, minimum 1).
pub fn scale_tokens(trace: &[ProgramSpec], factor: f64) -> Vec<ProgramSpec> {
    let scale = |n: usize| ((n as f64 * factor).round() as usize).max(1);
    trace
        .iter()
        .map(|p| ProgramSpec {
            turns: p
                .turns
                .iter()
                .map(|t| TurnSpec {
                    new_prompt_tokens: scale(t.new_prompt_tokens),
                    decode_tokens: scale(t.decode_tokens),
                    ..t.clone()
                })
                .collect(),
            ..p.clone()
        })
        .collect()
}

/// Compresses arrival times so the offered job rate is multiplied by `mult`.
pub fn scale_arrival_rate(trace: &[ProgramSpec], mult: f64) -> Vec<ProgramSpec> {
    trace
        .iter()
        .map(|p| ProgramSpec {
            arrival_time_s: p.arrival_time_s / mult,
            ..p.clone()
        })
        .collect()
}
