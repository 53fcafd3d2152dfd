use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::toolcall::{parse_tool_name, ToolCallMessage};
use super::ProgramSpec;
use crate::error::{Error, Result};

/// Reads a line-delimited JSON trace, one program per line.
pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<ProgramSpec>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_trace(file, path)
}

/// Parses and validates trace records. Blank lines are skipped. The result
/// is sorted by arrival time (stable).
pub fn parse_trace(reader: impl Read, path: &Path) -> Result<Vec<ProgramSpec>> {
    let mut programs = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let err = |message: String| Error::TraceFormat {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut program: ProgramSpec =
            serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        for turn in &mut program.turns {
            if turn.tool_name.is_none() {
                if let Some(output) = &turn.model_output {
                    turn.tool_name = parse_tool_name(&ToolCallMessage::new(output.as_str())).into_name();
                }
            }
        }
        program.validate().map_err(err)?;
        if !seen.insert(program.program_id.clone()) {
            return Err(err(format!("program_id: duplicate `{}`", program.program_id)));
        }
        programs.push(program);
    }
    programs.sort_by(|a, b| a.arrival_time_s.total_cmp(&b.arrival_time_s));
    Ok(programs)
}

pub fn to_jsonl(programs: &[ProgramSpec]) -> Result<String> {
    let mut out = String::new();
    for p in programs {
        out.push_str(&serde_json::to_string(p)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_trace(path: impl AsRef<Path>, programs: &[ProgramSpec]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_jsonl(programs)?).map_err(|e| Error::io(path, e))
}

/// SHA-256 of the canonical JSONL encoding, hex.
pub fn trace_hash(programs: &[ProgramSpec]) -> String {
    let canonical = to_jsonl(programs).expect("trace serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}
