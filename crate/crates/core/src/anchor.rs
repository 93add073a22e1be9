//! Anchor selection: classify each hunk's intent (Reviewer), keep the fixes
//! that address the root cause (Evaluator), and pick the statements to trace
//! (Locator), all expressed as lines of the fix's parent revision.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agent::{ask, text_field, StageError, ToolAccess};
use crate::diff::{deleted_or_modified_lines, FileDiff, Hunk, LineKind};
use crate::llm::{AgentRole, ChatBackend, ChatRequest};
use crate::prompts::PromptSet;
use crate::repo::{split_lines, RepoHandle};
use crate::root_cause::RootCauseReport;
use crate::structured::CATEGORIES;
use crate::tools::{tool_specs, ToolScope};

/// Conventional Commits change types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeCategory {
    Feat,
    Fix,
    Build,
    Chore,
    Ci,
    Docs,
    Style,
    Refactor,
    Perf,
    Test,
}

impl ChangeCategory {
    pub const ALL: [ChangeCategory; 10] = [
        Self::Feat,
        Self::Fix,
        Self::Build,
        Self::Chore,
        Self::Ci,
        Self::Docs,
        Self::Style,
        Self::Refactor,
        Self::Perf,
        Self::Test,
    ];

    pub fn as_str(self) -> &'static str {
        CATEGORIES[Self::ALL.iter().position(|c| *c == self).expect("listed")]
    }
}

impl fmt::Display for ChangeCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChangeCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        crate::structured::normalize_enum(s, &CATEGORIES)
            .and_then(|canon| Self::ALL.iter().copied().find(|c| c.as_str() == canon))
            .ok_or_else(|| format!("unknown change category {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HunkIntent {
    pub hunk_index: usize,
    pub file: String,
    pub category: ChangeCategory,
    pub intent_summary: String,
    /// Modification, runtime effect, inferred intent, distilled tuple.
    pub trace: [String; 4],
    pub tool_rounds: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relevance {
    #[serde(rename = "RELEVANT")]
    Relevant,
    #[serde(rename = "IRRELEVANT")]
    Irrelevant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceDecision {
    pub hunk_index: usize,
    pub verdict: Relevance,
    pub rationale: String,
}

/// A line of the fix's parent revision from which backtracking starts.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AnchorStatement {
    pub file: String,
    pub line_no: u32,
    pub snippet: String,
    pub origin_hunk: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorSelection {
    pub intents: Vec<HunkIntent>,
    pub relevance: Vec<RelevanceDecision>,
    pub anchors: Vec<AnchorStatement>,
    /// No anchor survived, so every deleted line of the fix was used instead.
    pub fallback: bool,
}

/// Hunk text with old and new line numbers in front of each line.
pub fn render_numbered_hunk(h: &Hunk) -> String {
    let mut out = h.header();
    out.push('\n');
    for l in &h.lines {
        let num = |n: Option<u32>| n.map_or_else(String::new, |n| n.to_string());
        let sign = match l.kind {
            LineKind::Added => '+',
            LineKind::Deleted => '-',
            LineKind::Context => ' ',
        };
        out.push_str(&format!("{:>6} {:>6} {sign}{}\n", num(l.old_no), num(l.new_no), l.text));
    }
    out
}

/// Shared inputs for the per-hunk agent calls of one fix.
pub struct HunkContext<'a> {
    pub repo: &'a RepoHandle,
    /// Fix commit and its first parent.
    pub scope: &'a ToolScope,
    pub commit_message: &'a str,
    pub max_tool_rounds: u32,
}

impl HunkContext<'_> {
    fn tools(&self) -> ToolAccess<'_> {
        ToolAccess {
            repo: self.repo,
            scope: self.scope,
            max_rounds: self.max_tool_rounds,
        }
    }

    fn parent(&self) -> Result<&str, StageError> {
        self.scope
            .previous
            .as_deref()
            .ok_or_else(|| StageError::Precondition("fix commit has no parent".into()))
    }
}

/// Reviewer call for one hunk.
pub fn infer_intent(
    backend: &dyn ChatBackend,
    prompts: &PromptSet,
    ctx: &HunkContext<'_>,
    file: &FileDiff,
    hunk: &Hunk,
) -> Result<HunkIntent, StageError> {
    let index = hunk.index.to_string();
    let rendered = render_numbered_hunk(hunk);
    let user = prompts.user(
        AgentRole::Reviewer,
        &[
            ("commit_message", ctx.commit_message),
            ("hunk_index", &index),
            ("file", file.display_path()),
            ("hunk", &rendered),
        ],
    )?;
    let mut request = ChatRequest::new(AgentRole::Reviewer, prompts.system(AgentRole::Reviewer)?, user);
    request.tool_specs = tool_specs();
    let answer = ask(backend, prompts, request, Some(ctx.tools()))?;
    let v = &answer.value;
    let category: ChangeCategory = text_field(v, "category")
        .parse()
        .map_err(|e: String| StageError::output(AgentRole::Reviewer, e))?;
    let summary = text_field(v, "summary");
    Ok(HunkIntent {
        hunk_index: hunk.index,
        file: file.display_path().to_string(),
        category,
        trace: [
            text_field(v, "modification"),
            text_field(v, "runtime_effect"),
            text_field(v, "intent"),
            format!("<{category}, {summary}>"),
        ],
        intent_summary: summary,
        tool_rounds: answer.tool_rounds,
    })
}

/// Evaluator call. Only hunks classified as fixes may be checked.
pub fn check_relevance(
    backend: &dyn ChatBackend,
    prompts: &PromptSet,
    intent: &HunkIntent,
    hunk: &Hunk,
    root_cause: &RootCauseReport,
) -> Result<RelevanceDecision, StageError> {
    if intent.category != ChangeCategory::Fix {
        return Err(StageError::Precondition(format!(
            "hunk {} is {}, only fix hunks are checked for relevance",
            intent.hunk_index, intent.category
        )));
    }
    let index = intent.hunk_index.to_string();
    let rendered = render_numbered_hunk(hunk);
    let category = intent.category.to_string();
    let user = prompts.user(
        AgentRole::Evaluator,
        &[
            ("root_cause", &root_cause.summary),
            ("hunk_index", &index),
            ("file", &intent.file),
            ("hunk", &rendered),
            ("category", &category),
            ("summary", &intent.intent_summary),
        ],
    )?;
    let request = ChatRequest::new(AgentRole::Evaluator, prompts.system(AgentRole::Evaluator)?, user);
    let answer = ask(backend, prompts, request, None)?;
    let verdict = match answer.value["verdict"].as_str() {
        Some("RELEVANT") => Relevance::Relevant,
        Some("IRRELEVANT") => Relevance::Irrelevant,
        other => return Err(StageError::output(AgentRole::Evaluator, format!("verdict {other:?}"))),
    };
    Ok(RelevanceDecision {
        hunk_index: intent.hunk_index,
        verdict,
        rationale: text_field(&answer.value, "rationale"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Old,
    New,
}

/// Translates a line named by the model into old-side coordinates of `hunk`.
/// Old-side lines must lie inside the hunk. A new-side context line maps to
/// its old number; an added line maps to the nearest context line of the hunk
/// (the preceding one on a tie), then the nearest deleted line, then the
/// hunk's old start.
pub fn to_old_line(hunk: &Hunk, line: u32, side: Side) -> Option<u32> {
    if hunk.old_len == 0 {
        return None;
    }
    match side {
        Side::Old => hunk.covers_old(line).then_some(line),
        Side::New => {
            let pos = hunk.lines.iter().position(|l| l.new_no == Some(line))?;
            if let Some(old) = hunk.lines[pos].old_no {
                return Some(old);
            }
            let nearest = |kind: LineKind| {
                hunk.lines
                    .iter()
                    .enumerate()
                    .filter(|(_, l)| l.kind == kind)
                    .min_by_key(|(i, _)| (i.abs_diff(pos), *i > pos))
                    .and_then(|(_, l)| l.old_no)
            };
            nearest(LineKind::Context)
                .or_else(|| nearest(LineKind::Deleted))
                .or(Some(hunk.old_start))
        }
    }
}

fn parse_anchor_entry(entry: &Value) -> Option<(Option<String>, u32, Side)> {
    let line = match &entry["line"] {
        Value::Number(n) => u32::try_from(n.as_u64()?).ok()?,
        Value::String(s) => s.trim().parse().ok()?,
        _ => match &entry["line_no"] {
            Value::Number(n) => u32::try_from(n.as_u64()?).ok()?,
            _ => return None,
        },
    };
    let file = entry["file"].as_str().map(str::to_string).filter(|f| !f.is_empty());
    let side = match entry["side"].as_str().map(|s| s.trim().to_ascii_lowercase()) {
        Some(s) if s == "new" || s == "post" || s == "after" => Side::New,
        _ => Side::Old,
    };
    Some((file, line, side))
}

fn same_file(named: &str, file: &FileDiff) -> bool {
    let named = named.trim_start_matches("a/").trim_start_matches("b/");
    [file.old_path.as_deref(), file.new_path.as_deref()]
        .into_iter()
        .flatten()
        .any(|p| p == named || p.ends_with(&format!("/{named}")))
}

/// Locator call for one relevant hunk. Anchors outside the hunk, in another
/// file, or not present at the parent revision are dropped; an answer with no
/// usable anchor is an agent output error.
pub fn locate_anchors(
    backend: &dyn ChatBackend,
    prompts: &PromptSet,
    ctx: &HunkContext<'_>,
    file: &FileDiff,
    hunk: &Hunk,
    root_cause: &RootCauseReport,
) -> Result<Vec<AnchorStatement>, StageError> {
    let Some(old_path) = file.old_path.as_deref().filter(|_| hunk.old_len > 0) else {
        return Err(StageError::AnchorUnmappable { hunk: hunk.index });
    };
    let parent = ctx.parent()?;
    let index = hunk.index.to_string();
    let rendered = render_numbered_hunk(hunk);
    let user = prompts.user(
        AgentRole::Locator,
        &[
            ("root_cause", &root_cause.summary),
            ("hunk_index", &index),
            ("file", file.display_path()),
            ("hunk", &rendered),
        ],
    )?;
    let mut request = ChatRequest::new(AgentRole::Locator, prompts.system(AgentRole::Locator)?, user);
    request.tool_specs = tool_specs();
    let answer = ask(backend, prompts, request, Some(ctx.tools()))?;
    let entries = answer.value["anchors"].as_array().cloned().unwrap_or_default();
    let content = ctx.repo.file_at(parent, old_path)?.unwrap_or_default();
    let lines = split_lines(&content);
    let mut anchors = Vec::new();
    for entry in &entries {
        let Some((named, line, side)) = parse_anchor_entry(entry) else {
            log::warn!("hunk {}: unreadable anchor {entry}", hunk.index);
            continue;
        };
        if named.as_deref().is_some_and(|n| !same_file(n, file)) {
            log::warn!("hunk {}: anchor names another file {named:?}", hunk.index);
            continue;
        }
        let Some(old) = to_old_line(hunk, line, side) else {
            log::warn!("hunk {}: line {line} ({side:?}) is outside the hunk", hunk.index);
            continue;
        };
        let Some(text) = lines.get(old as usize - 1) else {
            continue;
        };
        anchors.push(AnchorStatement {
            file: old_path.to_string(),
            line_no: old,
            snippet: text.to_string(),
            origin_hunk: hunk.index,
        });
    }
    if anchors.is_empty() {
        return Err(StageError::output(AgentRole::Locator, format!("no usable anchor for hunk {}", hunk.index)));
    }
    Ok(anchors)
}

/// Fallback anchors: every deleted or modified line of the fix.
pub fn deleted_line_anchors(diff: &[FileDiff]) -> Vec<AnchorStatement> {
    deleted_or_modified_lines(diff)
        .into_iter()
        .map(|d| AnchorStatement {
            file: d.path,
            line_no: d.old_no,
            snippet: d.text,
            origin_hunk: d.hunk_index,
        })
        .collect()
}

/// Full anchor selection over every hunk of the fix. Hunks are processed in
/// order so that replayed transcripts line up.
pub fn select_anchors(
    backend: &dyn ChatBackend,
    prompts: &PromptSet,
    ctx: &HunkContext<'_>,
    diff: &[FileDiff],
    root_cause: &RootCauseReport,
) -> Result<AnchorSelection, StageError> {
    let hunks: Vec<(&FileDiff, &Hunk)> = diff
        .iter()
        .flat_map(|f| f.hunks.iter().map(move |h| (f, h)))
        .collect();
    let mut intents = Vec::new();
    for (f, h) in &hunks {
        intents.push(infer_intent(backend, prompts, ctx, f, h)?);
    }
    let mut relevance = Vec::new();
    for ((_, h), intent) in hunks.iter().zip(&intents) {
        if intent.category == ChangeCategory::Fix {
            relevance.push(check_relevance(backend, prompts, intent, h, root_cause)?);
        }
    }
    let mut anchors = Vec::new();
    let mut seen = BTreeSet::new();
    for decision in relevance.iter().filter(|d| d.verdict == Relevance::Relevant) {
        let (f, h) = hunks[decision.hunk_index];
        let found = match locate_anchors(backend, prompts, ctx, f, h, root_cause) {
            Ok(found) => found,
            Err(e @ (StageError::AnchorUnmappable { .. } | StageError::AgentOutput { .. })) => {
                log::warn!("{e}; hunk {} contributes no anchor", h.index);
                continue;
            }
            Err(e) => return Err(e),
        };
        for a in found {
            if seen.insert((a.file.clone(), a.line_no)) {
                anchors.push(a);
            }
        }
    }
    let fallback = anchors.is_empty();
    if fallback {
        log::warn!("no anchor selected; falling back to the deleted lines of the fix");
        anchors = deleted_line_anchors(diff);
    }
    Ok(AnchorSelection {
        intents,
        relevance,
        anchors,
        fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::parse_unified_diff;

    fn hunk(text: &str) -> Hunk {
        parse_unified_diff(text).unwrap().remove(0).hunks.remove(0)
    }

    #[test]
    fn category_parsing() {
        assert_eq!("FIX ".parse::<ChangeCategory>().unwrap(), ChangeCategory::Fix);
        assert_eq!("chore".parse::<ChangeCategory>().unwrap(), ChangeCategory::Chore);
        assert!("bugfix".parse::<ChangeCategory>().is_err());
        assert_eq!(ChangeCategory::Refactor.as_str(), "refactor");
    }

    #[test]
    fn added_line_maps_to_preceding_context_on_tie() {
        let h = hunk("--- a/f\n+++ b/f\n@@ -38,3 +38,4 @@\n a\n b\n+c\n d\n");
        assert_eq!(to_old_line(&h, 40, Side::New), Some(39));
        assert_eq!(to_old_line(&h, 41, Side::New), Some(40));
        assert_eq!(to_old_line(&h, 39, Side::Old), Some(39));
        assert_eq!(to_old_line(&h, 41, Side::Old), None);
    }

    #[test]
    fn modification_maps_to_deleted_line() {
        let h = hunk("--- a/f\n+++ b/f\n@@ -5 +5 @@\n-x\n+y\n");
        assert_eq!(to_old_line(&h, 5, Side::New), Some(5));
        assert_eq!(to_old_line(&h, 5, Side::Old), Some(5));
    }

    #[test]
    fn new_file_hunk_has_no_old_line() {
        let h = hunk("--- /dev/null\n+++ b/f\n@@ -0,0 +1,2 @@\n+a\n+b\n");
        assert_eq!(to_old_line(&h, 1, Side::New), None);
    }

    #[test]
    fn anchor_entries() {
        let e = serde_json::json!({"file": "x/A.java", "line": "40", "side": "new"});
        assert_eq!(parse_anchor_entry(&e), Some((Some("x/A.java".into()), 40, Side::New)));
        let e = serde_json::json!({"line": 7});
        assert_eq!(parse_anchor_entry(&e), Some((None, 7, Side::Old)));
    }
}
