//! Chat-completion gateway shared by all agents.
//!
//! [`ChatBackend`] is the only way agents talk to a model. Three backends
//! exist: [`LiveBackend`] (OpenAI-compatible HTTP), [`ReplayBackend`]
//! (answers from a recorded [`Transcript`]) and [`RecordingBackend`] (wraps a
//! live backend and captures a transcript that can be replayed later).

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

/// Environment variable holding the bearer credential for the live backend.
pub const API_KEY_ENV: &str = "MAS_SZZ_API_KEY";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("backend error: {0}")]
    Backend(String),
    #[error("transcript exhausted: no entry for {agent} #{ordinal}")]
    TranscriptExhausted { agent: AgentRole, ordinal: u32 },
    #[error("transcript mismatch: expected {expected}, got {agent} #{ordinal}")]
    TranscriptMismatch {
        expected: String,
        agent: AgentRole,
        ordinal: u32,
    },
    #[error("response does not match the {schema} schema: {reason}")]
    SchemaViolation {
        schema: String,
        reason: String,
        raw: String,
    },
    #[error("transcript file: {0}")]
    TranscriptIo(String),
}

/// The six agent roles of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgentRole {
    Auditor,
    Judge,
    Reviewer,
    Evaluator,
    Locator,
    Tracer,
}

impl AgentRole {
    pub const ALL: [AgentRole; 6] = [
        AgentRole::Auditor,
        AgentRole::Judge,
        AgentRole::Reviewer,
        AgentRole::Evaluator,
        AgentRole::Locator,
        AgentRole::Tracer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentRole::Auditor => "Auditor",
            AgentRole::Judge => "Judge",
            AgentRole::Reviewer => "Reviewer",
            AgentRole::Evaluator => "Evaluator",
            AgentRole::Locator => "Locator",
            AgentRole::Tracer => "Tracer",
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentRole::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown agent {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub name: String,
    #[serde(default)]
    pub arguments: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
    /// Calls made by an assistant turn.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCallRequest>,
    /// For `Role::Tool` messages: the call being answered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: None,
        }
    }

    pub fn assistant(content: impl Into<String>, tool_calls: Vec<ToolCallRequest>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
            tool_calls,
            tool_call_id: None,
        }
    }

    pub fn tool(call_id: Option<String>, content: impl Into<String>) -> Self {
        Self {
            role: Role::Tool,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: call_id,
        }
    }
}

/// JSON-schema description of a tool offered to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub parameters: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub agent: AgentRole,
    pub system_prompt: String,
    pub messages: Vec<Message>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_specs: Vec<ToolSpec>,
    /// Tool rounds the caller allows for this request.
    pub max_rounds: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    pub fn new(agent: AgentRole, system_prompt: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            agent,
            system_prompt: system_prompt.into(),
            messages: vec![Message::user(user)],
            tool_specs: Vec::new(),
            max_rounds: 0,
            max_tokens: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCallRequest>,
    #[serde(default, skip_serializing_if = "is_zero_usage")]
    pub usage: Usage,
}

fn is_zero_usage(u: &Usage) -> bool {
    *u == Usage::default()
}

impl ChatResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            ..Self::default()
        }
    }
}

/// Anything that can answer a chat request. Implementations must be safe to
/// share between threads.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }
}

// ---------------------------------------------------------------------------
// Transcripts and replay
// ---------------------------------------------------------------------------

/// One canned response, matched by agent and that agent's 0-based call ordinal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub agent: AgentRole,
    pub ordinal: u32,
    pub response: ChatResponse,
}

/// On disk: a JSON array of [`TranscriptEntry`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn new(entries: Vec<TranscriptEntry>) -> Self {
        Self { entries }
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::TranscriptIo(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| LlmError::TranscriptIo(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), LlmError> {
        let text = serde_json::to_string_pretty(self).expect("transcript serializes");
        std::fs::write(path, text + "\n")
            .map_err(|e| LlmError::TranscriptIo(format!("{}: {e}", path.display())))
    }

    /// Builder helper: appends a response for `agent`, numbering ordinals automatically.
    pub fn push(&mut self, agent: AgentRole, response: ChatResponse) -> &mut Self {
        let ordinal = self.entries.iter().filter(|e| e.agent == agent).count() as u32;
        self.entries.push(TranscriptEntry {
            agent,
            ordinal,
            response,
        });
        self
    }

    pub fn push_text(&mut self, agent: AgentRole, text: impl Into<String>) -> &mut Self {
        self.push(agent, ChatResponse::text(text))
    }
}

#[derive(Debug, Default)]
struct ReplayState {
    cursor: usize,
    seen: HashMap<AgentRole, u32>,
    used: Vec<bool>,
}

/// Deterministic backend answering from a transcript.
///
/// In strict mode each request must match the next entry in order. Otherwise
/// the first unused entry with the request's agent and ordinal is returned.
#[derive(Debug)]
pub struct ReplayBackend {
    transcript: Transcript,
    strict: bool,
    state: Mutex<ReplayState>,
}

impl ReplayBackend {
    pub fn new(transcript: Transcript, strict: bool) -> Self {
        let used = vec![false; transcript.entries.len()];
        Self {
            transcript,
            strict,
            state: Mutex::new(ReplayState {
                used,
                ..ReplayState::default()
            }),
        }
    }

    /// Requests answered so far.
    pub fn consumed(&self) -> usize {
        let state = self.state.lock().expect("replay state");
        state.used.iter().filter(|u| **u).count()
    }

    pub fn calls_for(&self, agent: AgentRole) -> u32 {
        let state = self.state.lock().expect("replay state");
        state.seen.get(&agent).copied().unwrap_or(0)
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let mut state = self.state.lock().expect("replay state");
        let agent = request.agent;
        let ordinal = state.seen.get(&agent).copied().unwrap_or(0);
        let index = if self.strict {
            let Some(entry) = self.transcript.entries.get(state.cursor) else {
                return Err(LlmError::TranscriptExhausted { agent, ordinal });
            };
            if entry.agent != agent || entry.ordinal != ordinal {
                return Err(LlmError::TranscriptMismatch {
                    expected: format!("{} #{}", entry.agent, entry.ordinal),
                    agent,
                    ordinal,
                });
            }
            state.cursor
        } else {
            self.transcript
                .entries
                .iter()
                .enumerate()
                .position(|(i, e)| !state.used[i] && e.agent == agent && e.ordinal == ordinal)
                .ok_or(LlmError::TranscriptExhausted { agent, ordinal })?
        };
        state.used[index] = true;
        state.cursor = index + 1;
        state.seen.insert(agent, ordinal + 1);
        debug!("replay {agent} #{ordinal}");
        Ok(self.transcript.entries[index].response.clone())
    }
}

/// Wraps another backend and records every exchange as a transcript.
pub struct RecordingBackend<B> {
    inner: B,
    recorded: Mutex<Transcript>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            recorded: Mutex::new(Transcript::default()),
        }
    }

    pub fn transcript(&self) -> Transcript {
        self.recorded.lock().expect("recording").clone()
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        // hold the lock across the call so ordinals follow completion order
        let mut recorded = self.recorded.lock().expect("recording");
        let response = self.inner.complete(request)?;
        let mut stored = response.clone();
        stored.usage = Usage::default();
        recorded.push(request.agent, stored);
        Ok(response)
    }
}

// ---------------------------------------------------------------------------
// Live backend
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveConfig {
    /// Base URL up to and including the API version, e.g. `https://openrouter.ai/api/v1`.
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub attempts: u32,
    pub backoff: Duration,
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub requests_per_minute: u32,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            base_url: "https://openrouter.ai/api/v1".into(),
            model: "openai/gpt-4o-mini".into(),
            temperature: 0.0,
            max_tokens: Some(4096),
            attempts: 3,
            backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(180),
            max_in_flight: 4,
            requests_per_minute: 60,
        }
    }
}

/// OpenAI-compatible `/chat/completions` client with bounded retries, an
/// in-flight cap and a per-minute rate limit.
pub struct LiveBackend {
    config: LiveConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    in_flight: (Mutex<usize>, Condvar),
    recent: Mutex<VecDeque<Instant>>,
}

enum Failure {
    Retryable(String),
    Fatal(String),
}

impl LiveBackend {
    pub fn new(config: LiveConfig, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            config,
            api_key,
            agent,
            in_flight: (Mutex::new(0), Condvar::new()),
            recent: Mutex::new(VecDeque::new()),
        }
    }

    /// Reads the credential from [`API_KEY_ENV`].
    pub fn from_env(config: LiveConfig) -> Self {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::new(config, key)
    }

    fn body(&self, request: &ChatRequest) -> Value {
        let mut messages = vec![json!({"role": "system", "content": request.system_prompt})];
        for m in &request.messages {
            let mut msg = json!({"role": m.role, "content": m.content});
            if !m.tool_calls.is_empty() {
                msg["tool_calls"] = Value::Array(
                    m.tool_calls
                        .iter()
                        .enumerate()
                        .map(|(i, c)| {
                            json!({
                                "id": c.id.clone().unwrap_or_else(|| format!("call_{i}")),
                                "type": "function",
                                "function": {"name": c.name, "arguments": c.arguments.to_string()},
                            })
                        })
                        .collect(),
                );
            }
            if let Some(id) = &m.tool_call_id {
                msg["tool_call_id"] = json!(id);
            }
            messages.push(msg);
        }
        let mut body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": messages,
        });
        if let Some(max) = request.max_tokens.or(self.config.max_tokens) {
            body["max_tokens"] = json!(max);
        }
        if !request.tool_specs.is_empty() {
            body["tools"] = Value::Array(
                request
                    .tool_specs
                    .iter()
                    .map(|t| {
                        json!({"type": "function", "function": {
                            "name": t.name, "description": t.description, "parameters": t.parameters}})
                    })
                    .collect(),
            );
        }
        body
    }

    fn acquire(&self) {
        let (lock, cv) = &self.in_flight;
        let mut n = lock.lock().expect("in-flight");
        while *n >= self.config.max_in_flight.max(1) {
            n = cv.wait(n).expect("in-flight");
        }
        *n += 1;
        drop(n);
        if self.config.requests_per_minute == 0 {
            return;
        }
        loop {
            let wait = {
                let mut recent = self.recent.lock().expect("rate window");
                let now = Instant::now();
                while recent.front().is_some_and(|t| now.duration_since(*t) >= Duration::from_secs(60)) {
                    recent.pop_front();
                }
                if recent.len() < self.config.requests_per_minute as usize {
                    recent.push_back(now);
                    None
                } else {
                    recent.front().map(|t| Duration::from_secs(60) - now.duration_since(*t))
                }
            };
            match wait {
                None => return,
                Some(d) => std::thread::sleep(d),
            }
        }
    }

    fn release(&self) {
        let (lock, cv) = &self.in_flight;
        *lock.lock().expect("in-flight") -= 1;
        cv.notify_one();
    }

    fn attempt(&self, body: &Value) -> Result<ChatResponse, Failure> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let mut req = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| Failure::Retryable(format!("transport: {e}")))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Retryable(format!("reading body: {e}")))?;
        match status {
            200..=299 => parse_completion(&text).map_err(Failure::Fatal),
            408 | 409 | 429 | 500..=599 => Err(Failure::Retryable(format!("HTTP {status}: {text}"))),
            _ => Err(Failure::Fatal(format!("HTTP {status}: {text}"))),
        }
    }
}

/// Extracts text, tool calls and usage from an OpenAI-style completion body.
pub fn parse_completion(body: &str) -> Result<ChatResponse, String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("invalid JSON body: {e}"))?;
    let message = &v["choices"][0]["message"];
    if message.is_null() {
        return Err(format!("no choices in completion: {body}"));
    }
    let text = message["content"].as_str().unwrap_or_default().to_string();
    let mut tool_calls = Vec::new();
    if let Some(calls) = message["tool_calls"].as_array() {
        for c in calls {
            let name = c["function"]["name"].as_str().unwrap_or_default().to_string();
            let raw_args = &c["function"]["arguments"];
            let arguments = match raw_args {
                Value::String(s) => serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.clone())),
                other => other.clone(),
            };
            tool_calls.push(ToolCallRequest {
                id: c["id"].as_str().map(str::to_string),
                name,
                arguments,
            });
        }
    }
    let usage = Usage {
        prompt_tokens: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
        completion_tokens: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
    };
    Ok(ChatResponse {
        text,
        tool_calls,
        usage,
    })
}

impl ChatBackend for LiveBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let body = self.body(request);
        let mut last = String::new();
        for attempt in 0..self.config.attempts.max(1) {
            if attempt > 0 {
                std::thread::sleep(self.config.backoff * 2u32.pow(attempt - 1));
            }
            self.acquire();
            let result = self.attempt(&body);
            self.release();
            match result {
                Ok(resp) => return Ok(resp),
                Err(Failure::Fatal(msg)) => return Err(LlmError::Backend(msg)),
                Err(Failure::Retryable(msg)) => {
                    warn!("{} attempt {} failed: {msg}", request.agent, attempt + 1);
                    last = msg;
                }
            }
        }
        Err(LlmError::Backend(format!(
            "giving up after {} attempts: {last}",
            self.config.attempts.max(1)
        )))
    }
}
