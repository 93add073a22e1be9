//! Repository tools offered to agents (ExpandContext, LocateSymbol) and the
//! loop that executes the tool calls a model makes.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::llm::{ChatBackend, ChatRequest, ChatResponse, LlmError, Message, ToolCallRequest, ToolSpec};
use crate::repo::{split_lines, RepoError, RepoHandle};

pub const EXPAND_CONTEXT: &str = "ExpandContext";
pub const LOCATE_SYMBOL: &str = "LocateSymbol";
/// Lines per tool payload before truncation.
pub const PAYLOAD_LINE_CAP: usize = 400;
pub const DEFAULT_MAX_TOOL_ROUNDS: u32 = 6;
pub const DEFAULT_MAX_HITS: usize = 50;

const BUDGET_NOTICE: &str = "The tool budget for this step is used up. Give your final answer now without calling tools.";

/// Revisions a tool call may read: `current` by default, `previous` when the
/// call passes `"version": "pre"`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolScope {
    pub current: String,
    pub previous: Option<String>,
}

impl ToolScope {
    pub fn new(current: impl Into<String>, previous: Option<String>) -> Self {
        Self {
            current: current.into(),
            previous,
        }
    }

    /// Scope for a commit and its first parent.
    pub fn for_commit(repo: &RepoHandle, commit: &str) -> Result<Self, RepoError> {
        let meta = repo.commit_meta(commit)?;
        Ok(Self::new(meta.id.clone(), meta.first_parent().map(str::to_string)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    pub arguments: Value,
    pub revision: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub call: ToolCall,
    pub payload: String,
    pub truncated: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum ToolError {
    #[error("unknown tool {0}")]
    UnknownTool(String),
    #[error("bad arguments for {tool}: {reason}")]
    BadArguments { tool: String, reason: String },
    #[error("no parent revision to read")]
    NoPreviousRevision,
    #[error(transparent)]
    Repo(#[from] RepoError),
}

/// Schemas published to the model.
pub fn tool_specs() -> Vec<ToolSpec> {
    let version = json!({
        "type": "string",
        "enum": ["pre", "post"],
        "description": "\"post\" (default) reads the revision under analysis, \"pre\" its parent"
    });
    vec![
        ToolSpec {
            name: EXPAND_CONTEXT.into(),
            description: "Return the lines start_line..end_line of a file, each prefixed with its line number.".into(),
            parameters: json!({
                "type": "object",
                "properties": {
                    "file": {"type": "string"},
                    "start_line": {"type": "integer", "minimum": 1},
                    "end_line": {"type": "integer", "minimum": 1},
                    "version": version,
                },
                "required": ["file", "start_line", "end_line"],
            }),
        },
        ToolSpec {
            name: LOCATE_SYMBOL.into(),
            description: "Search every tracked file for a plain, case-sensitive string. Returns path:line: text for each hit.".into(),
            parameters: json!({
                "type": "object",
                "properties": {
                    "query": {"type": "string"},
                    "max_hits": {"type": "integer", "minimum": 1},
                    "version": version,
                },
                "required": ["query"],
            }),
        },
    ]
}

fn cap_payload(lines: Vec<String>, already_truncated: bool) -> (String, bool) {
    let truncated = already_truncated || lines.len() > PAYLOAD_LINE_CAP;
    let mut kept: Vec<String> = lines.into_iter().take(PAYLOAD_LINE_CAP).collect();
    if truncated {
        kept.push("[truncated]".into());
    }
    (kept.join("\n"), truncated)
}

/// Lines `[max(1,start) .. min(end, len)]` of `file` at `revision`, as `n: text`.
pub fn expand_context(
    repo: &RepoHandle,
    revision: &str,
    file: &str,
    start: u32,
    end: u32,
) -> Result<ToolResult, ToolError> {
    let call = ToolCall {
        name: EXPAND_CONTEXT.into(),
        arguments: json!({"file": file, "start_line": start, "end_line": end}),
        revision: revision.to_string(),
    };
    if start > end {
        return Err(ToolError::BadArguments {
            tool: EXPAND_CONTEXT.into(),
            reason: format!("start_line {start} is after end_line {end}"),
        });
    }
    let text = repo.file_at(revision, file)?.ok_or_else(|| RepoError::FileAbsent {
        revision: revision.to_string(),
        file: file.to_string(),
    })?;
    let lines = split_lines(&text);
    let first = start.max(1) as usize;
    let last = (end as usize).min(lines.len());
    let numbered: Vec<String> = (first..=last)
        .map(|n| format!("{n}: {}", lines[n - 1]))
        .collect();
    let (payload, truncated) = cap_payload(numbered, false);
    Ok(ToolResult {
        call,
        payload,
        truncated,
    })
}

/// Fixed-string search over tracked files at `revision`, ordered by path then line.
pub fn locate_symbol(
    repo: &RepoHandle,
    revision: &str,
    query: &str,
    max_hits: usize,
) -> Result<ToolResult, ToolError> {
    let call = ToolCall {
        name: LOCATE_SYMBOL.into(),
        arguments: json!({"query": query, "max_hits": max_hits}),
        revision: revision.to_string(),
    };
    if query.is_empty() {
        return Err(ToolError::BadArguments {
            tool: LOCATE_SYMBOL.into(),
            reason: "query is empty".into(),
        });
    }
    let hits = repo.grep_fixed(revision, query)?;
    let over = hits.len() > max_hits;
    let lines: Vec<String> = hits
        .into_iter()
        .take(max_hits)
        .map(|(path, line, text)| format!("{path}:{line}: {text}"))
        .collect();
    let (payload, truncated) = cap_payload(lines, over);
    Ok(ToolResult {
        call,
        payload,
        truncated,
    })
}

fn arg_str<'a>(args: &'a Value, tool: &str, key: &str) -> Result<&'a str, ToolError> {
    args.get(key).and_then(Value::as_str).ok_or_else(|| ToolError::BadArguments {
        tool: tool.into(),
        reason: format!("missing string argument {key}"),
    })
}

fn arg_u32(args: &Value, tool: &str, key: &str) -> Result<Option<u32>, ToolError> {
    let bad = || ToolError::BadArguments {
        tool: tool.into(),
        reason: format!("argument {key} is not a positive integer"),
    };
    match args.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Number(n)) => n.as_u64().and_then(|v| u32::try_from(v).ok()).map(Some).ok_or_else(bad),
        Some(Value::String(s)) => s.trim().parse().map(Some).map_err(|_| bad()),
        Some(_) => Err(bad()),
    }
}

/// Runs one model-issued call within `scope`.
pub fn execute(repo: &RepoHandle, scope: &ToolScope, request: &ToolCallRequest) -> Result<ToolResult, ToolError> {
    // some providers send arguments as a JSON-encoded string
    let args = match &request.arguments {
        Value::String(s) => serde_json::from_str(s).map_err(|e| ToolError::BadArguments {
            tool: request.name.clone(),
            reason: format!("arguments are not JSON: {e}"),
        })?,
        other => other.clone(),
    };
    if !args.is_object() {
        return Err(ToolError::BadArguments {
            tool: request.name.clone(),
            reason: "arguments must be an object".into(),
        });
    }
    let revision = match args.get("version").and_then(Value::as_str) {
        Some("pre") => scope.previous.as_deref().ok_or(ToolError::NoPreviousRevision)?,
        Some("post") | None => scope.current.as_str(),
        Some(other) => {
            return Err(ToolError::BadArguments {
                tool: request.name.clone(),
                reason: format!("version must be \"pre\" or \"post\", got {other:?}"),
            })
        }
    };
    match request.name.as_str() {
        EXPAND_CONTEXT => {
            let file = arg_str(&args, EXPAND_CONTEXT, "file")?;
            let need = |key| {
                arg_u32(&args, EXPAND_CONTEXT, key)?.ok_or_else(|| ToolError::BadArguments {
                    tool: EXPAND_CONTEXT.into(),
                    reason: format!("missing argument {key}"),
                })
            };
            let start = need("start_line")?;
            let end = need("end_line")?;
            expand_context(repo, revision, file, start, end)
        }
        LOCATE_SYMBOL => {
            let query = arg_str(&args, LOCATE_SYMBOL, "query")?;
            let max_hits = arg_u32(&args, LOCATE_SYMBOL, "max_hits")?
                .map_or(DEFAULT_MAX_HITS, |n| n as usize);
            locate_symbol(repo, revision, query, max_hits)
        }
        other => Err(ToolError::UnknownTool(other.to_string())),
    }
}

#[derive(Debug, Clone)]
pub struct ToolLoopOutcome {
    pub response: ChatResponse,
    /// Tool executions performed (including ones that returned an error payload).
    pub tool_rounds: u32,
    pub completions: u32,
    /// The budget ran out and a final answer was forced without tools.
    pub budget_exceeded: bool,
}

/// Alternates completions and tool executions until the model answers without
/// calling a tool. At most `max_tool_rounds` tools run; when the budget is
/// spent one last completion is requested with tools withdrawn.
pub fn run_tool_loop(
    backend: &dyn ChatBackend,
    request: &ChatRequest,
    repo: &RepoHandle,
    scope: &ToolScope,
    max_tool_rounds: u32,
) -> Result<ToolLoopOutcome, LlmError> {
    let mut req = request.clone();
    req.max_rounds = max_tool_rounds;
    if max_tool_rounds == 0 {
        req.tool_specs.clear();
    } else if req.tool_specs.is_empty() {
        req.tool_specs = tool_specs();
    }
    let mut executed = 0u32;
    let mut completions = 0u32;
    loop {
        let response = backend.complete(&req)?;
        completions += 1;
        if response.tool_calls.is_empty() || req.tool_specs.is_empty() {
            return Ok(ToolLoopOutcome {
                response,
                tool_rounds: executed,
                completions,
                budget_exceeded: req.tool_specs.is_empty() && max_tool_rounds > 0,
            });
        }
        req.messages
            .push(Message::assistant(response.text.clone(), response.tool_calls.clone()));
        for call in &response.tool_calls {
            let payload = if executed < max_tool_rounds {
                executed += 1;
                match execute(repo, scope, call) {
                    Ok(result) => result.payload,
                    Err(e) => format!("error: {e}"),
                }
            } else {
                "error: not executed, tool budget exhausted".to_string()
            };
            req.messages.push(Message::tool(call.id.clone(), payload));
        }
        if executed >= max_tool_rounds {
            log::warn!("{} exhausted its tool budget of {max_tool_rounds}", req.agent);
            req.tool_specs.clear();
            req.messages.push(Message::user(BUDGET_NOTICE));
        }
    }
}
