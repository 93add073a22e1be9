//! History backtracking: blame an anchor, ask the Tracer whether the
//! vulnerability already existed at the blamed commit, and keep walking back
//! until it did not.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::agent::{ask, text_field, StageError, ToolAccess};
use crate::anchor::AnchorStatement;
use crate::diff::{map_line_backward, parse_unified_diff, render_hunk};
use crate::llm::{AgentRole, ChatBackend, ChatRequest};
use crate::prompts::PromptSet;
use crate::repo::{split_lines, RepoError, RepoHandle};
use crate::root_cause::RootCauseReport;
use crate::sanitize::sanitize_commit_message;
use crate::tools::{tool_specs, ToolScope, PAYLOAD_LINE_CAP};

pub const DEFAULT_MAX_DEPTH: u32 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Presence {
    Present,
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    AbsenceFound,
    HistoryRoot,
    DepthCap,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AnchorPos {
    pub file: String,
    pub line_no: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub commit: String,
    pub anchor_pos: AnchorPos,
    pub verdict: Presence,
    pub rationale: String,
    pub tool_rounds: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceResult {
    pub anchor: AnchorStatement,
    /// Newest first.
    pub steps: Vec<TraceStep>,
    pub vic: Option<String>,
    pub terminated_by: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VicResult {
    pub case_id: String,
    pub vics: BTreeSet<String>,
    pub traces: Vec<TraceResult>,
    pub degraded: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct TraceConfig {
    pub max_depth: u32,
    pub max_tool_rounds: u32,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            max_depth: DEFAULT_MAX_DEPTH,
            max_tool_rounds: crate::tools::DEFAULT_MAX_TOOL_ROUNDS,
        }
    }
}

fn file_change_text(repo: &RepoHandle, commit: &str, file: &str) -> Result<String, RepoError> {
    let meta = repo.commit_meta(commit)?;
    let text = repo.diff_against_parent(&meta, repo.default_context())?;
    let files = parse_unified_diff(&text).map_err(|e| RepoError::Parse(e.to_string()))?;
    let Some(fd) = files.iter().find(|f| f.new_path.as_deref() == Some(file)) else {
        return Ok("(this commit did not change the file)".into());
    };
    let mut lines: Vec<String> = Vec::new();
    if fd.old_path.as_deref() != Some(file) {
        let origin = fd.old_path.as_deref().unwrap_or("nothing (new file)");
        lines.push(format!("(file created from {origin})"));
    }
    for h in &fd.hunks {
        lines.extend(render_hunk(h).lines().map(str::to_string));
    }
    if lines.len() > PAYLOAD_LINE_CAP {
        lines.truncate(PAYLOAD_LINE_CAP);
        lines.push("[truncated]".into());
    }
    Ok(lines.join("\n"))
}

/// Tracer verdict for `commit`. A file missing at `commit` is Absent without
/// consulting the model. Returns the verdict, rationale and tool executions.
pub fn assess_presence(
    backend: &dyn ChatBackend,
    prompts: &PromptSet,
    repo: &RepoHandle,
    commit: &str,
    pos: &AnchorPos,
    root_cause: &RootCauseReport,
    max_tool_rounds: u32,
) -> Result<(Presence, String, u32), StageError> {
    let Some(content) = repo.file_at(commit, &pos.file)? else {
        return Ok((
            Presence::Absent,
            format!("{} does not exist at this revision", pos.file),
            0,
        ));
    };
    let meta = repo.commit_meta(commit)?;
    let line_text = split_lines(&content)
        .get((pos.line_no as usize).wrapping_sub(1))
        .copied()
        .unwrap_or_default()
        .to_string();
    let message = sanitize_commit_message(&meta.message);
    let file_diff = file_change_text(repo, &meta.id, &pos.file)?;
    let line = pos.line_no.to_string();
    let user = prompts.user(
        AgentRole::Tracer,
        &[
            ("root_cause", &root_cause.summary),
            ("commit", &meta.short_id),
            ("commit_message", &message),
            ("file", &pos.file),
            ("line", &line),
            ("line_text", &line_text),
            ("file_diff", &file_diff),
        ],
    )?;
    let scope = ToolScope::new(meta.id.clone(), meta.first_parent().map(str::to_string));
    let mut request = ChatRequest::new(AgentRole::Tracer, prompts.system(AgentRole::Tracer)?, user);
    request.tool_specs = tool_specs();
    let tools = ToolAccess {
        repo,
        scope: &scope,
        max_rounds: max_tool_rounds,
    };
    let answer = ask(backend, prompts, request, Some(tools))?;
    let verdict = match answer.value["verdict"].as_str() {
        Some("Present") => Presence::Present,
        Some("Absent") => Presence::Absent,
        other => return Err(StageError::output(AgentRole::Tracer, format!("verdict {other:?}"))),
    };
    Ok((verdict, text_field(&answer.value, "rationale"), answer.tool_rounds))
}

struct Walk {
    steps: Vec<TraceStep>,
    last_present: Option<String>,
}

impl Walk {
    fn finish(self, anchor: &AnchorStatement, vic: Option<String>, by: Termination, error: Option<String>) -> TraceResult {
        TraceResult {
            anchor: anchor.clone(),
            steps: self.steps,
            vic,
            terminated_by: by,
            error,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn assess(
        &mut self,
        backend: &dyn ChatBackend,
        prompts: &PromptSet,
        repo: &RepoHandle,
        commit: &str,
        pos: AnchorPos,
        root_cause: &RootCauseReport,
        cfg: &TraceConfig,
    ) -> Result<Presence, StageError> {
        let (verdict, rationale, tool_rounds) =
            assess_presence(backend, prompts, repo, commit, &pos, root_cause, cfg.max_tool_rounds)?;
        self.steps.push(TraceStep {
            commit: commit.to_string(),
            anchor_pos: pos,
            verdict,
            rationale,
            tool_rounds,
        });
        if verdict == Presence::Present {
            self.last_present = Some(commit.to_string());
        }
        Ok(verdict)
    }
}

enum Stop {
    Done(Option<String>, Termination),
    Failed(StageError),
}

/// Walks one anchor back through history.
///
/// Each round blames the anchor at the current revision, asks for a verdict at
/// the blamed commit C, and on Present maps the line into C's first parent and
/// continues there. When C introduced the line (no pre-image) the parent is
/// assessed once more and the walk ends. Repository failures and unusable
/// model output end the walk with `Termination::Error`; backend failures are
/// returned as errors.
pub fn trace_anchor(
    backend: &dyn ChatBackend,
    prompts: &PromptSet,
    repo: &RepoHandle,
    fix: &str,
    anchor: &AnchorStatement,
    root_cause: &RootCauseReport,
    cfg: &TraceConfig,
) -> Result<TraceResult, StageError> {
    let parent = repo
        .first_parent(fix)?
        .ok_or_else(|| StageError::Precondition(format!("fix {fix} has no parent")))?;
    let mut walk = Walk {
        steps: Vec::new(),
        last_present: None,
    };
    let mut revision = parent;
    let mut pos = AnchorPos {
        file: anchor.file.clone(),
        line_no: anchor.line_no,
    };
    let stop = loop {
        if walk.steps.len() as u32 >= cfg.max_depth {
            break Stop::Done(walk.last_present.clone(), Termination::DepthCap);
        }
        let round = (|| -> Result<Option<Stop>, StageError> {
            let blame = repo.blame_line(&revision, &pos.file, pos.line_no)?;
            let commit = blame.commit_id;
            let here = AnchorPos {
                file: blame.file_path,
                line_no: blame.line_no,
            };
            let verdict = walk.assess(backend, prompts, repo, &commit, here.clone(), root_cause, cfg)?;
            if verdict == Presence::Absent {
                return Ok(Some(Stop::Done(walk.last_present.clone(), Termination::AbsenceFound)));
            }
            let Some(grandparent) = repo.first_parent(&commit)? else {
                return Ok(Some(Stop::Done(Some(commit), Termination::HistoryRoot)));
            };
            let mapped = map_line_backward(repo, &commit, &here.file, here.line_no, 0.0)?;
            match mapped {
                Some((file, line_no)) if repo.file_at(&grandparent, &file)?.is_some() => {
                    revision = grandparent;
                    pos = AnchorPos { file, line_no };
                    Ok(None)
                }
                _ => {
                    // the line has no pre-image: look once at the parent and stop
                    let verdict = walk.assess(backend, prompts, repo, &grandparent, here, root_cause, cfg)?;
                    let by = match verdict {
                        Presence::Absent => Termination::AbsenceFound,
                        Presence::Present => Termination::HistoryRoot,
                    };
                    Ok(Some(Stop::Done(walk.last_present.clone(), by)))
                }
            }
        })();
        match round {
            Ok(None) => continue,
            Ok(Some(stop)) => break stop,
            Err(e) => break Stop::Failed(e),
        }
    };
    match stop {
        Stop::Done(vic, by) => Ok(walk.finish(anchor, vic, by, None)),
        Stop::Failed(e @ (StageError::Repo(_) | StageError::AgentOutput { .. })) => {
            log::warn!("trace of {}:{} stopped: {e}", anchor.file, anchor.line_no);
            let vic = walk.last_present.clone();
            Ok(walk.finish(anchor, vic, Termination::Error, Some(e.to_string())))
        }
        Stop::Failed(e) => Err(e),
    }
}

/// Union of the per-anchor VICs. `fallback` marks that anchors came from the
/// deleted-line fallback rather than the Locator.
pub fn identify_vics(case_id: &str, traces: Vec<TraceResult>, fallback: bool) -> VicResult {
    let vics = traces.iter().filter_map(|t| t.vic.clone()).collect();
    let degraded = fallback
        || traces
            .iter()
            .any(|t| matches!(t.terminated_by, Termination::DepthCap | Termination::Error));
    VicResult {
        case_id: case_id.to_string(),
        vics,
        traces,
        degraded,
    }
}
