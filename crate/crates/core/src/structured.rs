//! Extraction of structured agent outputs from free-form completions.
//!
//! Agents are asked for a single JSON object. Models do not always comply, so
//! the extractor takes the first JSON object anywhere in the text and, failing
//! that, a block of `Key: value` lines. Field names are normalized through an
//! alias table and enumerated values through a per-field normalization table.

use serde_json::{Map, Value};

use crate::llm::{AgentRole, ChatResponse, LlmError};

/// The ten Conventional Commits change categories.
pub const CATEGORIES: [&str; 10] = [
    "feat", "fix", "build", "chore", "ci", "docs", "style", "refactor", "perf", "test",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FieldType {
    Text,
    Bool,
    Array,
    /// One of a fixed set of canonical spellings.
    Enum(&'static [&'static str]),
}

struct Field {
    name: &'static str,
    ty: FieldType,
    required: bool,
    aliases: &'static [&'static str],
}

const fn field(name: &'static str, ty: FieldType, required: bool) -> Field {
    Field {
        name,
        ty,
        required,
        aliases: &[],
    }
}

const fn aliased(name: &'static str, ty: FieldType, required: bool, aliases: &'static [&'static str]) -> Field {
    Field {
        name,
        ty,
        required,
        aliases,
    }
}

use FieldType::{Array, Bool, Enum, Text};

const AUDITOR: &[Field] = &[
    aliased("summary", Text, true, &["root_cause"]),
    aliased("evidence", Array, true, &["evidence_points"]),
];
const JUDGE: &[Field] = &[
    field("decision", Enum(&["Pass", "Fail"]), true),
    aliased("traceability_ok", Bool, true, &["evidence_traceability", "traceability"]),
    aliased("consistency_ok", Bool, true, &["logical_consistency", "consistency"]),
    field("feedback", Text, false),
];
const REVIEWER: &[Field] = &[
    aliased("modification", Text, false, &["step1", "code_modification"]),
    aliased("runtime_effect", Text, false, &["step2", "behavior", "runtime_behavior"]),
    aliased("intent", Text, false, &["step3", "developer_intent"]),
    aliased("category", Enum(&CATEGORIES), true, &["change_category", "type"]),
    aliased("summary", Text, true, &["intent_summary"]),
];
const EVALUATOR: &[Field] = &[
    aliased("verdict", Enum(&["RELEVANT", "IRRELEVANT"]), true, &["decision", "relevance"]),
    aliased("rationale", Text, false, &["reason", "reasoning"]),
];
const LOCATOR: &[Field] = &[
    aliased("anchors", Array, true, &["statements", "lines"]),
    aliased("rationale", Text, false, &["reason", "reasoning"]),
];
const TRACER: &[Field] = &[
    aliased("verdict", Enum(&["Present", "Absent"]), true, &["decision", "presence"]),
    aliased("rationale", Text, false, &["reason", "reasoning"]),
];

/// Expected output shape of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutputSchema(pub AgentRole);

impl OutputSchema {
    fn fields(self) -> &'static [Field] {
        match self.0 {
            AgentRole::Auditor => AUDITOR,
            AgentRole::Judge => JUDGE,
            AgentRole::Reviewer => REVIEWER,
            AgentRole::Evaluator => EVALUATOR,
            AgentRole::Locator => LOCATOR,
            AgentRole::Tracer => TRACER,
        }
    }

    pub fn name(self) -> &'static str {
        self.0.name()
    }
}

fn normalize_key(key: &str) -> String {
    key.trim()
        .trim_matches(|c: char| c == '*' || c == '`' || c == '"' || c == '-')
        .trim()
        .to_ascii_lowercase()
        .replace([' ', '-'], "_")
}

/// Canonical spelling of an enumerated value, or `None` when it matches nothing.
/// Accepts case and whitespace noise plus decorations such as `fix(auth)` or `**PASS**`.
pub fn normalize_enum(raw: &str, allowed: &'static [&'static str]) -> Option<&'static str> {
    let cleaned: String = raw
        .trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_ascii_lowercase();
    let head: String = cleaned
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric() || *c == '_')
        .collect();
    let lookup = |needle: &str| allowed.iter().copied().find(|a| a.eq_ignore_ascii_case(needle));
    lookup(&cleaned).or_else(|| lookup(&head))
}

fn violation(schema: OutputSchema, reason: impl Into<String>, raw: &str) -> LlmError {
    LlmError::SchemaViolation {
        schema: schema.name().to_string(),
        reason: reason.into(),
        raw: raw.to_string(),
    }
}

/// Every JSON object that parses, scanning left to right.
fn json_objects(text: &str) -> impl Iterator<Item = Map<String, Value>> + '_ {
    text.char_indices().filter(|(_, c)| *c == '{').filter_map(move |(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => Some(map),
            _ => None,
        }
    })
}

fn labeled_block(text: &str) -> Map<String, Value> {
    let mut map = Map::new();
    let mut current: Option<String> = None;
    for line in text.lines() {
        let trimmed = line.trim();
        let candidate = trimmed.split_once(':').filter(|(k, _)| {
            let k = normalize_key(k);
            !k.is_empty() && k.len() <= 40 && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        });
        match candidate {
            Some((k, v)) => {
                let key = normalize_key(k);
                map.insert(key.clone(), Value::String(v.trim().to_string()));
                current = Some(key);
            }
            None if !trimmed.is_empty() => {
                if let Some(Value::String(s)) = current.as_ref().and_then(|k| map.get_mut(k)) {
                    if !s.is_empty() {
                        s.push('\n');
                    }
                    s.push_str(trimmed);
                }
            }
            None => current = None,
        }
    }
    map
}

fn coerce(schema: OutputSchema, f: &Field, value: &Value, raw: &str) -> Result<Value, LlmError> {
    let bad = |what: &str| violation(schema, format!("field {} {what}", f.name), raw);
    match f.ty {
        FieldType::Text => match value {
            Value::String(s) => Ok(Value::String(s.trim().to_string())),
            Value::Null => Ok(Value::String(String::new())),
            other => Ok(Value::String(other.to_string())),
        },
        FieldType::Bool => match value {
            Value::Bool(b) => Ok(Value::Bool(*b)),
            Value::String(s) => match s.trim().to_ascii_lowercase().trim_matches('.') {
                "true" | "yes" | "pass" | "ok" | "1" => Ok(Value::Bool(true)),
                "false" | "no" | "fail" | "0" => Ok(Value::Bool(false)),
                _ => Err(bad("is not a boolean")),
            },
            _ => Err(bad("is not a boolean")),
        },
        FieldType::Array => match value {
            Value::Array(_) => Ok(value.clone()),
            _ => Err(bad("is not a list")),
        },
        FieldType::Enum(allowed) => {
            let s = match value {
                Value::String(s) => s.as_str(),
                _ => return Err(bad("is not a string")),
            };
            normalize_enum(s, allowed)
                .map(|v| Value::String(v.to_string()))
                .ok_or_else(|| bad(&format!("has unexpected value {s:?}")))
        }
    }
}

fn conform(schema: OutputSchema, map: &Map<String, Value>, raw: &str) -> Result<Map<String, Value>, LlmError> {
    let normalized: Map<String, Value> = map.iter().map(|(k, v)| (normalize_key(k), v.clone())).collect();
    let mut out = Map::new();
    for f in schema.fields() {
        let found = std::iter::once(f.name)
            .chain(f.aliases.iter().copied())
            .find_map(|k| normalized.get(k));
        match found {
            Some(v) => {
                out.insert(f.name.to_string(), coerce(schema, f, v, raw)?);
            }
            None if f.required => {
                return Err(violation(schema, format!("missing field {}", f.name), raw));
            }
            None => {}
        }
    }
    Ok(out)
}

/// Labeled-field fallback for the Locator: `File: X` / `Line: N` becomes one anchor.
fn locator_from_labels(map: &Map<String, Value>) -> Option<Map<String, Value>> {
    let line = map.get("line").or_else(|| map.get("line_no"))?;
    let mut anchor = Map::new();
    anchor.insert("line".into(), line.clone());
    if let Some(file) = map.get("file") {
        anchor.insert("file".into(), file.clone());
    }
    if let Some(side) = map.get("side") {
        anchor.insert("side".into(), side.clone());
    }
    let mut out = map.clone();
    out.insert("anchors".into(), Value::Array(vec![Value::Object(anchor)]));
    Some(out)
}

/// Pulls the first block conforming to `schema` out of a completion.
pub fn parse_structured(response: &ChatResponse, schema: OutputSchema) -> Result<Value, LlmError> {
    parse_structured_text(&response.text, schema)
}

pub fn parse_structured_text(text: &str, schema: OutputSchema) -> Result<Value, LlmError> {
    let mut first_error = None;
    for object in json_objects(text) {
        match conform(schema, &object, text) {
            Ok(v) => return Ok(Value::Object(v)),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    let mut labels = labeled_block(text);
    if schema.0 == AgentRole::Locator {
        if let Some(with_anchor) = locator_from_labels(&labels) {
            labels = with_anchor;
        }
    }
    if !labels.is_empty() {
        match conform(schema, &labels, text) {
            Ok(v) => return Ok(Value::Object(v)),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    Err(first_error.unwrap_or_else(|| violation(schema, "no structured block found", text)))
}
