//! Root-cause analysis: an Auditor drafts a root cause with evidence, a Judge
//! checks it, and rejected drafts go back to the Auditor with the feedback.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agent::{ask, text_field, StageError};
use crate::diff::{render_hunk, FileDiff};
use crate::llm::{AgentRole, ChatBackend, ChatRequest};
use crate::prompts::PromptSet;

pub const DEFAULT_BUDGET: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceSource {
    CveDescription,
    CommitMessage,
    Hunk,
}

impl EvidenceSource {
    fn parse(raw: &str) -> Option<Self> {
        let key = raw.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        match key.as_str() {
            "cve_description" | "cve" | "description" => Some(Self::CveDescription),
            "commit_message" | "message" | "commit" => Some(Self::CommitMessage),
            "hunk" | "diff" | "patch" => Some(Self::Hunk),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidencePoint {
    pub claim: String,
    pub source: EvidenceSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hunk_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RootCauseReport {
    pub summary: String,
    pub evidence: Vec<EvidencePoint>,
    /// 1-based round that produced this report.
    pub attempt: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub decision: Decision,
    pub traceability_ok: bool,
    pub consistency_ok: bool,
    #[serde(default)]
    pub feedback: String,
}

/// The three documents both agents see.
#[derive(Debug, Clone)]
pub struct CaseDocuments {
    pub description: String,
    /// Already stripped of hash references.
    pub commit_message: String,
    pub diff: Vec<FileDiff>,
}

impl CaseDocuments {
    pub fn hunk_count(&self) -> usize {
        self.diff.iter().map(|f| f.hunks.len()).sum()
    }
}

/// Diff text with each hunk labeled by its index.
pub fn numbered_diff(files: &[FileDiff]) -> String {
    let mut out = String::new();
    for f in files {
        let old = f.old_path.as_deref().unwrap_or("/dev/null");
        let new = f.new_path.as_deref().unwrap_or("/dev/null");
        out.push_str(&format!("--- {old}\n+++ {new}\n"));
        for h in &f.hunks {
            out.push_str(&format!("[hunk {}]\n", h.index));
            out.push_str(&render_hunk(h));
        }
    }
    out
}

fn render_report(report: &RootCauseReport) -> String {
    let body = serde_json::json!({"summary": report.summary, "evidence": report.evidence});
    serde_json::to_string_pretty(&body).unwrap_or_default()
}

fn report_from(value: &Value, docs: &CaseDocuments, attempt: u32) -> Result<RootCauseReport, StageError> {
    let bad = |reason: String| StageError::output(AgentRole::Auditor, reason);
    let summary = text_field(value, "summary");
    if summary.is_empty() {
        return Err(bad("empty summary".into()));
    }
    let items = value["evidence"].as_array().cloned().unwrap_or_default();
    if items.is_empty() {
        return Err(bad("no evidence points".into()));
    }
    let hunks = docs.hunk_count();
    let mut evidence = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let claim = text_field(item, "claim");
        let source_raw = text_field(item, "source");
        let source = EvidenceSource::parse(&source_raw)
            .ok_or_else(|| bad(format!("evidence {i} has unknown source {source_raw:?}")))?;
        let index = match &item["hunk_index"] {
            Value::Number(n) => Some(n.as_u64().ok_or_else(|| bad(format!("evidence {i} hunk_index {n}")))? as usize),
            Value::String(s) if !s.trim().is_empty() => Some(
                s.trim()
                    .parse()
                    .map_err(|_| bad(format!("evidence {i} hunk_index {s:?}")))?,
            ),
            _ => None,
        };
        let hunk_index = match (source, index) {
            (EvidenceSource::Hunk, None) => return Err(bad(format!("evidence {i} cites a hunk without an index"))),
            (EvidenceSource::Hunk, Some(h)) if h >= hunks => {
                return Err(bad(format!("evidence {i} cites hunk {h} but the diff has {hunks}")))
            }
            (EvidenceSource::Hunk, h) => h,
            _ => None,
        };
        evidence.push(EvidencePoint {
            claim,
            source,
            hunk_index,
        });
    }
    Ok(RootCauseReport {
        summary,
        evidence,
        attempt,
    })
}

/// One Auditor call. `feedback` from a failed review is appended to the prompt.
pub fn audit(
    backend: &dyn ChatBackend,
    prompts: &PromptSet,
    docs: &CaseDocuments,
    feedback: Option<&str>,
    attempt: u32,
) -> Result<RootCauseReport, StageError> {
    let diff = numbered_diff(&docs.diff);
    let feedback = feedback
        .map(|f| format!("\n## Feedback on your previous attempt\n{f}\n"))
        .unwrap_or_default();
    let user = prompts.user(
        AgentRole::Auditor,
        &[
            ("description", &docs.description),
            ("commit_message", &docs.commit_message),
            ("diff", &diff),
            ("feedback", &feedback),
        ],
    )?;
    let request = ChatRequest::new(AgentRole::Auditor, prompts.system(AgentRole::Auditor)?, user);
    let answer = ask(backend, prompts, request, None)?;
    report_from(&answer.value, docs, attempt)
}

fn verdict_from(value: &Value) -> Result<JudgeVerdict, StageError> {
    let bad = |reason: &str| StageError::output(AgentRole::Judge, reason);
    let decision = match value["decision"].as_str() {
        Some("Pass") => Decision::Pass,
        Some("Fail") => Decision::Fail,
        _ => return Err(bad("missing decision")),
    };
    let verdict = JudgeVerdict {
        decision,
        traceability_ok: value["traceability_ok"].as_bool().unwrap_or(false),
        consistency_ok: value["consistency_ok"].as_bool().unwrap_or(false),
        feedback: text_field(value, "feedback"),
    };
    let both = verdict.traceability_ok && verdict.consistency_ok;
    match decision {
        Decision::Pass if !both => Err(bad("Pass with a failed check")),
        Decision::Fail if both => Err(bad("Fail with both checks passing")),
        Decision::Fail if verdict.feedback.trim().is_empty() => Err(bad("Fail without feedback")),
        _ => Ok(verdict),
    }
}

/// One Judge call on `report`, using the same documents the Auditor saw.
pub fn judge(
    backend: &dyn ChatBackend,
    prompts: &PromptSet,
    report: &RootCauseReport,
    docs: &CaseDocuments,
) -> Result<JudgeVerdict, StageError> {
    let diff = numbered_diff(&docs.diff);
    let rendered = render_report(report);
    let user = prompts.user(
        AgentRole::Judge,
        &[
            ("description", &docs.description),
            ("commit_message", &docs.commit_message),
            ("diff", &diff),
            ("report", &rendered),
        ],
    )?;
    let request = ChatRequest::new(AgentRole::Judge, prompts.system(AgentRole::Judge)?, user);
    let answer = ask(backend, prompts, request, None)?;
    verdict_from(&answer.value)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CritiqueRound {
    pub report: RootCauseReport,
    pub verdict: JudgeVerdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RootCauseOutcome {
    pub report: RootCauseReport,
    pub verdict: JudgeVerdict,
    pub rounds_used: u32,
    /// The budget ran out without a Pass; `report` is the last attempt.
    pub degraded: bool,
    pub history: Vec<CritiqueRound>,
}

/// Audit and judge until a Pass or until `budget` audits have run.
pub fn root_cause_loop(
    backend: &dyn ChatBackend,
    prompts: &PromptSet,
    docs: &CaseDocuments,
    budget: u32,
) -> Result<RootCauseOutcome, StageError> {
    if budget == 0 {
        return Err(StageError::Precondition("critique budget must be at least 1".into()));
    }
    let mut history: Vec<CritiqueRound> = Vec::new();
    for attempt in 1..=budget {
        let feedback = history.last().map(|r| r.verdict.feedback.as_str());
        let report = audit(backend, prompts, docs, feedback, attempt)?;
        let verdict = judge(backend, prompts, &report, docs)?;
        let passed = verdict.decision == Decision::Pass;
        history.push(CritiqueRound { report, verdict });
        if passed {
            break;
        }
    }
    let last = history.last().cloned().expect("budget >= 1");
    let degraded = last.verdict.decision == Decision::Fail;
    if degraded {
        log::warn!("root cause not accepted after {budget} rounds; continuing with the last draft");
    }
    Ok(RootCauseOutcome {
        report: last.report,
        verdict: last.verdict,
        rounds_used: history.len() as u32,
        degraded,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn docs(hunks: usize) -> CaseDocuments {
        let text: String = (0..hunks)
            .map(|i| format!("diff --git a/f{i} b/f{i}\n--- a/f{i}\n+++ b/f{i}\n@@ -1 +1 @@\n-a\n+b\n"))
            .collect();
        let diff = crate::diff::parse_unified_diff(&text).unwrap();
        CaseDocuments {
            description: "d".into(),
            commit_message: "m".into(),
            diff,
        }
    }

    #[test]
    fn report_validation() {
        let d = docs(8);
        let ok = json!({"summary": "s", "evidence": [{"claim": "c", "source": "hunk", "hunk_index": 0}]});
        let r = report_from(&ok, &d, 1).unwrap();
        assert_eq!(r.evidence[0].hunk_index, Some(0));
        let out_of_range = json!({"summary": "s", "evidence": [{"claim": "c", "source": "hunk", "hunk_index": 99}]});
        assert!(matches!(report_from(&out_of_range, &d, 1), Err(StageError::AgentOutput { .. })));
        let no_evidence = json!({"summary": "s", "evidence": []});
        assert!(report_from(&no_evidence, &d, 1).is_err());
        let stray_index = json!({"summary": "s", "evidence": [{"claim": "c", "source": "CVE description", "hunk_index": 3}]});
        assert_eq!(report_from(&stray_index, &d, 1).unwrap().evidence[0].hunk_index, None);
    }

    #[test]
    fn verdict_invariants() {
        let pass = json!({"decision": "Pass", "traceability_ok": true, "consistency_ok": true});
        assert_eq!(verdict_from(&pass).unwrap().decision, Decision::Pass);
        let bad_pass = json!({"decision": "Pass", "traceability_ok": true, "consistency_ok": false});
        assert!(verdict_from(&bad_pass).is_err());
        let silent_fail = json!({"decision": "Fail", "traceability_ok": false, "consistency_ok": true});
        assert!(verdict_from(&silent_fail).is_err());
        let fail = json!({"decision": "Fail", "traceability_ok": false, "consistency_ok": true, "feedback": "cite hunks"});
        assert_eq!(verdict_from(&fail).unwrap().feedback, "cite hunks");
    }

    #[test]
    fn numbered_diff_labels_hunks_across_files() {
        let text = numbered_diff(&docs(2).diff);
        assert!(text.contains("[hunk 0]") && text.contains("[hunk 1]"));
    }
}
