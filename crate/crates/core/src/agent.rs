//! Shared plumbing for the agent stages: the error type and a request helper
//! that parses the structured answer and retries once on unreadable output.

use serde_json::Value;

use crate::llm::{AgentRole, ChatBackend, ChatRequest, LlmError, Message};
use crate::prompts::{PromptError, PromptSet};
use crate::repo::{RepoError, RepoHandle};
use crate::structured::{parse_structured, OutputSchema};
use crate::tools::{run_tool_loop, ToolScope};

#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error("{agent} output unusable: {reason}")]
    AgentOutput { agent: AgentRole, reason: String },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("hunk {hunk} has no pre-fix line to anchor on")]
    AnchorUnmappable { hunk: usize },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Repo(#[from] RepoError),
}

impl StageError {
    pub fn output(agent: AgentRole, reason: impl Into<String>) -> Self {
        StageError::AgentOutput {
            agent,
            reason: reason.into(),
        }
    }
}

/// Repository tools made available to one agent call.
#[derive(Clone, Copy)]
pub struct ToolAccess<'a> {
    pub repo: &'a RepoHandle,
    pub scope: &'a ToolScope,
    pub max_rounds: u32,
}

/// A parsed agent answer and the tool executions spent on it.
#[derive(Debug, Clone)]
pub struct Answer {
    pub value: Value,
    pub tool_rounds: u32,
}

/// Sends `request`, parses the answer against the agent's schema, and on a
/// schema violation asks once more with a reminder to answer in JSON only.
pub fn ask(
    backend: &dyn ChatBackend,
    prompts: &PromptSet,
    mut request: ChatRequest,
    tools: Option<ToolAccess<'_>>,
) -> Result<Answer, StageError> {
    let schema = OutputSchema(request.agent);
    let mut tool_rounds = 0;
    for attempt in 0..2 {
        let response = match tools {
            Some(t) => {
                let outcome = run_tool_loop(backend, &request, t.repo, t.scope, t.max_rounds)?;
                tool_rounds += outcome.tool_rounds;
                outcome.response
            }
            None => backend.complete(&request)?,
        };
        match parse_structured(&response, schema) {
            Ok(value) => return Ok(Answer { value, tool_rounds }),
            Err(LlmError::SchemaViolation { reason, .. }) if attempt == 0 => {
                log::debug!("{} answer unreadable ({reason}); retrying", request.agent);
                request
                    .messages
                    .push(Message::assistant(response.text.clone(), Vec::new()));
                request
                    .messages
                    .push(Message::user(prompts.render("json_reminder", &[])?));
            }
            Err(LlmError::SchemaViolation { reason, .. }) => {
                return Err(StageError::output(request.agent, reason));
            }
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!("loop returns on the second attempt")
}

pub(crate) fn text_field(value: &Value, key: &str) -> String {
    value.get(key).and_then(Value::as_str).unwrap_or_default().to_string()
}
