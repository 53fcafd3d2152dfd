use serde_json::Value;

/// How to interpret a raw model output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MessageFormat {
    /// JSON function-call blocks, or a fenced ```bash block; anything else
    /// is treated as plain text.
    #[default]
    Auto,
    /// The whole message is a bash command string.
    Bash,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolCallMessage {
    pub raw: String,
    pub format: MessageFormat,
}

impl ToolCallMessage {
    pub fn new(raw: impl Into<String>) -> Self {
        Self {
            raw: raw.into(),
            format: MessageFormat::Auto,
        }
    }

    pub fn bash(raw: impl Into<String>) -> Self {
        Self {
            raw: raw.into(),
            format: MessageFormat::Bash,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ToolParse {
    Tool(String),
    NoCall,
    /// A function-call block was present but had no usable name.
    Malformed,
}

impl ToolParse {
    pub fn into_name(self) -> Option<String> {
        match self {
            ToolParse::Tool(name) => Some(name),
            _ => None,
        }
    }
}

/// Tool-name extraction with a running count of malformed calls.
#[derive(Debug, Default, Clone)]
pub struct ToolCallParser {
    pub warnings: u64,
}

impl ToolCallParser {
    pub fn parse(&mut self, msg: &ToolCallMessage) -> Option<String> {
        match parse_tool_name(msg) {
            ToolParse::Tool(name) => Some(name),
            ToolParse::NoCall => None,
            ToolParse::Malformed => {
                self.warnings += 1;
                None
            }
        }
    }
}

/// Extracts the tool (function or executable) name from a model output.
///
/// Structured outputs yield the `name` of the first block whose `type` marks
/// a function/tool call. Bash commands are split on `&&` / `||`; the first
/// word of the first sub-command is the tool. Never panics.
pub fn parse_tool_name(msg: &ToolCallMessage) -> ToolParse {
    let raw = msg.raw.trim();
    if msg.format == MessageFormat::Bash {
        return bash_tool(raw).map_or(ToolParse::NoCall, ToolParse::Tool);
    }
    if raw.starts_with('{') || raw.starts_with('[') {
        if let Ok(value) = serde_json::from_str::<Value>(raw) {
            return structured_tool(&value);
        }
    }
    match fenced_bash(raw) {
        Some(body) => bash_tool(body).map_or(ToolParse::NoCall, ToolParse::Tool),
        None => ToolParse::NoCall,
    }
}

fn is_call_type(t: &str) -> bool {
    matches!(t, "function_call" | "function" | "tool_call" | "tool_use")
}

fn structured_tool(value: &Value) -> ToolParse {
    let mut blocks = Vec::new();
    collect_blocks(value, &mut blocks);
    for block in blocks {
        let Some(kind) = block.get("type").and_then(Value::as_str) else {
            continue;
        };
        if !is_call_type(kind) {
            continue;
        }
        let name = block
            .get("name")
            .or_else(|| block.get("function").and_then(|f| f.get("name")))
            .and_then(Value::as_str)
            .map(str::trim)
            .filter(|n| !n.is_empty());
        return match name {
            Some(n) => ToolParse::Tool(n.to_string()),
            None => ToolParse::Malformed,
        };
    }
    ToolParse::NoCall
}

// Top-level object, array of blocks, or an envelope holding blocks under
// `output` / `tool_calls` / `content`.
fn collect_blocks<'a>(value: &'a Value, out: &mut Vec<&'a Value>) {
    match value {
        Value::Array(items) => items.iter().for_each(|v| collect_blocks(v, out)),
        Value::Object(map) => {
            if map.contains_key("type") {
                out.push(value);
            }
            for key in ["output", "tool_calls", "content"] {
                if let Some(inner @ Value::Array(_)) = map.get(key) {
                    collect_blocks(inner, out);
                }
            }
        }
        _ => {}
    }
}

fn fenced_bash(raw: &str) -> Option<&str> {
    let start = raw.find("```bash")? + "```bash".len();
    let rest = &raw[start..];
    let end = rest.find("```").unwrap_or(rest.len());
    Some(&rest[..end])
}

fn bash_tool(command: &str) -> Option<String> {
    let cut = [command.find("&&"), command.find("||")]
        .into_iter()
        .flatten()
        .min()
        .unwrap_or(command.len());
    command[..cut].split_whitespace().next().map(str::to_string)
}
