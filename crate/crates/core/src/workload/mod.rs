//! Agentic program traces: the data model, file format, synthetic
//! generation, and tool-call name extraction.

mod scaling;
mod synth;
mod toolcall;
mod trace;

use serde::{Deserialize, Serialize};

pub use scaling::{scale_arrival_rate, scale_tokens, turn_scaling_transform};
pub use synth::{generate_synthetic, CountDist, Distribution, SyntheticParams, ToolSpec};
pub use toolcall::{parse_tool_name, MessageFormat, ToolCallMessage, ToolCallParser, ToolParse};
pub use trace::{load_trace, parse_trace, trace_hash, write_trace, to_jsonl};

/// One LLM turn of a program and the tool call that follows it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnSpec {
    /// Tokens appended to the context this turn, including the previous
    /// tool's response.
    pub new_prompt_tokens: usize,
    pub decode_tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_duration_s: Option<f64>,
    /// Raw model output; when `tool_name` is missing the loader extracts it
    /// from here.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_output: Option<String>,
}

impl TurnSpec {
    pub fn final_turn(new_prompt_tokens: usize, decode_tokens: usize) -> Self {
        Self {
            new_prompt_tokens,
            decode_tokens,
            tool_name: None,
            tool_duration_s: None,
            model_output: None,
        }
    }

    pub fn with_tool(
        new_prompt_tokens: usize,
        decode_tokens: usize,
        tool: impl Into<String>,
        duration_s: f64,
    ) -> Self {
        Self {
            new_prompt_tokens,
            decode_tokens,
            tool_name: Some(tool.into()),
            tool_duration_s: Some(duration_s),
            model_output: None,
        }
    }

    pub fn tokens(&self) -> usize {
        self.new_prompt_tokens + self.decode_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgramSpec {
    pub program_id: String,
    pub arrival_time_s: f64,
    pub turns: Vec<TurnSpec>,
}

impl ProgramSpec {
    /// Context length after the final turn.
    pub fn context_tokens(&self) -> usize {
        self.turns.iter().map(TurnSpec::tokens).sum()
    }

    pub fn total_tool_time(&self) -> f64 {
        self.turns.iter().filter_map(|t| t.tool_duration_s).sum()
    }

    /// Checks the per-program invariants; returns a message naming the
    /// offending field.
    pub fn validate(&self) -> Result<(), String> {
        if self.program_id.is_empty() {
            return Err("program_id: must be non-empty".into());
        }
        if !(self.arrival_time_s >= 0.0) || !self.arrival_time_s.is_finite() {
            return Err(format!(
                "arrival_time_s: must be a finite non-negative number, got {}",
                self.arrival_time_s
            ));
        }
        if self.turns.is_empty() {
            return Err("turns: must contain at least one turn".into());
        }
        let last = self.turns.len() - 1;
        for (i, turn) in self.turns.iter().enumerate() {
            if turn.decode_tokens == 0 {
                return Err(format!("turns[{i}].decode_tokens: must be >= 1"));
            }
            match (&turn.tool_name, turn.tool_duration_s) {
                (Some(_), None) => {
                    return Err(format!("turns[{i}].tool_duration_s: required with tool_name"))
                }
                (None, Some(_)) => {
                    return Err(format!("turns[{i}].tool_name: required with tool_duration_s"))
                }
                (Some(_), Some(d)) if !(d >= 0.0) || !d.is_finite() => {
                    return Err(format!(
                        "turns[{i}].tool_duration_s: must be finite and >= 0, got {d}"
                    ))
                }
                (Some(_), Some(_)) if i == last => {
                    return Err(format!("turns[{i}].tool_name: final turn cannot call a tool"))
                }
                (None, None) if i != last => {
                    return Err(format!(
                        "turns[{i}].tool_name: every turn but the last must call a tool"
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }
}
