//! End-to-end run for one case: root cause, anchors, backtracking.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::agent::StageError;
use crate::anchor::{select_anchors, AnchorStatement, HunkContext, HunkIntent, RelevanceDecision};
use crate::diff::parse_unified_diff;
use crate::llm::ChatBackend;
use crate::prompts::PromptSet;
use crate::repo::{RepoError, RepoHandle};
use crate::root_cause::{root_cause_loop, CaseDocuments, RootCauseOutcome, DEFAULT_BUDGET};
use crate::sanitize::sanitize_commit_message;
use crate::tools::{ToolScope, DEFAULT_MAX_TOOL_ROUNDS};
use crate::trace::{identify_vics, trace_anchor, TraceConfig, TraceResult, VicResult, DEFAULT_MAX_DEPTH};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Auditor attempts in the critique loop.
    pub budget: u32,
    pub max_tool_rounds: u32,
    pub max_depth: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            max_tool_rounds: DEFAULT_MAX_TOOL_ROUNDS,
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseInput {
    pub case_id: String,
    pub fix_commit: String,
    pub description: String,
}

/// Everything a run produced, for auditing and replay comparison.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub fix_commit: String,
    pub root_cause: RootCauseOutcome,
    pub intents: Vec<HunkIntent>,
    pub relevance: Vec<RelevanceDecision>,
    pub anchors: Vec<AnchorStatement>,
    pub anchor_fallback: bool,
    pub traces: Vec<TraceResult>,
    pub vics: BTreeSet<String>,
    pub degraded: bool,
}

impl CaseRecord {
    pub fn vic_result(&self) -> VicResult {
        VicResult {
            case_id: self.case_id.clone(),
            vics: self.vics.clone(),
            traces: self.traces.clone(),
            degraded: self.degraded,
        }
    }
}

pub struct Pipeline<'a> {
    pub backend: &'a dyn ChatBackend,
    pub repo: &'a RepoHandle,
    pub prompts: &'a PromptSet,
    pub config: PipelineConfig,
}

impl Pipeline<'_> {
    pub fn run(&self, input: &CaseInput) -> Result<CaseRecord, StageError> {
        let (meta, diff_text) = self.repo.show_commit(&input.fix_commit)?;
        let parent = meta
            .first_parent()
            .map(str::to_string)
            .ok_or_else(|| StageError::Precondition(format!("fix {} is a root commit", meta.id)))?;
        let diff = parse_unified_diff(&diff_text).map_err(|e| RepoError::Parse(e.to_string()))?;
        let docs = CaseDocuments {
            description: input.description.clone(),
            commit_message: sanitize_commit_message(&meta.message),
            diff,
        };

        let root_cause = root_cause_loop(self.backend, self.prompts, &docs, self.config.budget)?;

        let scope = ToolScope::new(meta.id.clone(), Some(parent));
        let ctx = HunkContext {
            repo: self.repo,
            scope: &scope,
            commit_message: &docs.commit_message,
            max_tool_rounds: self.config.max_tool_rounds,
        };
        let selection = select_anchors(self.backend, self.prompts, &ctx, &docs.diff, &root_cause.report)?;

        let trace_cfg = TraceConfig {
            max_depth: self.config.max_depth,
            max_tool_rounds: self.config.max_tool_rounds,
        };
        let mut traces = Vec::with_capacity(selection.anchors.len());
        for anchor in &selection.anchors {
            traces.push(trace_anchor(
                self.backend,
                self.prompts,
                self.repo,
                &meta.id,
                anchor,
                &root_cause.report,
                &trace_cfg,
            )?);
        }
        let result = identify_vics(&input.case_id, traces, selection.fallback);
        let degraded = result.degraded || root_cause.degraded;
        Ok(CaseRecord {
            case_id: input.case_id.clone(),
            fix_commit: meta.id,
            root_cause,
            intents: selection.intents,
            relevance: selection.relevance,
            anchors: selection.anchors,
            anchor_fallback: selection.fallback,
            traces: result.traces,
            vics: result.vics,
            degraded,
        })
    }
}
