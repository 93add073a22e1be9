//! Runs algorithms over a dataset and scores them.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::classic::{self, Algorithm, DEFAULT_VSZZ_THRESHOLD};
use crate::dataset::{PreparedCase, SkippedCase};
use crate::llm::{ChatBackend, RecordingBackend, ReplayBackend, Transcript};
use crate::metrics::{compute_metrics, matched_truth, Convention, Metrics};
use crate::pipeline::{CaseInput, Pipeline, PipelineConfig};
use crate::prompts::PromptSet;
use crate::repo::RepoHandle;

/// Where the agent pipeline gets its completions.
#[derive(Clone)]
pub enum MasBackend {
    /// One transcript per case, `<dir>/<case id>.json`.
    Replay { dir: PathBuf, strict: bool },
    Live(Arc<dyn ChatBackend>),
    /// Live calls, with each case's transcript written to `<dir>/<case id>.json`.
    Record { inner: Arc<dyn ChatBackend>, dir: PathBuf },
}

#[derive(Clone)]
pub struct EvalConfig {
    pub algorithms: Vec<Algorithm>,
    pub vszz_threshold: f64,
    pub parallelism: usize,
    pub context_lines: u32,
    pub pipeline: PipelineConfig,
    pub prompts: PromptSet,
    pub mas_backend: Option<MasBackend>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            algorithms: Algorithm::CLASSIC.to_vec(),
            vszz_threshold: DEFAULT_VSZZ_THRESHOLD,
            parallelism: 1,
            context_lines: crate::repo::DEFAULT_CONTEXT_LINES,
            pipeline: PipelineConfig::default(),
            prompts: PromptSet::builtin(),
            mas_backend: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub cve_id: String,
    pub algorithm: Algorithm,
    pub identified: BTreeSet<String>,
    pub truth: BTreeSet<String>,
    /// Truth commits that were identified.
    pub hits: BTreeSet<String>,
    pub degraded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Candidate set or pipeline record.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmRow {
    pub algorithm: Algorithm,
    pub label: String,
    pub standard: Metrics,
    pub swapped: Metrics,
    pub cases: usize,
    pub failed: usize,
    pub degraded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub rows: Vec<AlgorithmRow>,
    pub per_case: Vec<CaseOutcome>,
    pub skipped: Vec<SkippedCase>,
}

/// File-system-safe transcript name for a case id.
pub fn transcript_file_name(case_id: &str) -> String {
    let safe: String = case_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect();
    format!("{safe}.json")
}

struct Identified {
    set: BTreeSet<String>,
    degraded: bool,
    record: Value,
}

fn run_mas(prepared: &PreparedCase, repo: &RepoHandle, config: &EvalConfig) -> Result<Identified, String> {
    let backend = config
        .mas_backend
        .as_ref()
        .ok_or("no backend configured for mas")?;
    let input = CaseInput {
        case_id: prepared.case.cve_id.clone(),
        fix_commit: prepared.case.fix_commit.clone(),
        description: prepared.case.description.clone(),
    };
    let run = |b: &dyn ChatBackend| {
        Pipeline {
            backend: b,
            repo,
            prompts: &config.prompts,
            config: config.pipeline,
        }
        .run(&input)
        .map_err(|e| e.to_string())
    };
    let record = match backend {
        MasBackend::Replay { dir, strict } => {
            let path = dir.join(transcript_file_name(&input.case_id));
            let transcript = Transcript::load(&path).map_err(|e| e.to_string())?;
            run(&ReplayBackend::new(transcript, *strict))?
        }
        MasBackend::Live(inner) => run(&**inner)?,
        MasBackend::Record { inner, dir } => {
            let recorder = RecordingBackend::new(&**inner);
            let result = run(&recorder);
            std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
            recorder
                .transcript()
                .save(&dir.join(transcript_file_name(&input.case_id)))
                .map_err(|e| e.to_string())?;
            result?
        }
    };
    Ok(Identified {
        set: record.vics.clone(),
        degraded: record.degraded,
        record: serde_json::to_value(&record).map_err(|e| e.to_string())?,
    })
}

fn run_case(prepared: &PreparedCase, algorithm: Algorithm, config: &EvalConfig) -> CaseOutcome {
    let case = &prepared.case;
    let result = RepoHandle::open(&prepared.repo_path, Some(config.context_lines))
        .map_err(|e| e.to_string())
        .and_then(|repo| match algorithm {
            Algorithm::Mas => run_mas(prepared, &repo, config),
            classic_algo => {
                let set = classic::run(&repo, classic_algo, &case.fix_commit, config.vszz_threshold)
                    .map_err(|e| e.to_string())?;
                Ok(Identified {
                    degraded: !set.warnings.is_empty(),
                    record: serde_json::to_value(&set).map_err(|e| e.to_string())?,
                    set: set.candidates,
                })
            }
        });
    let (identified, degraded, error, record) = match result {
        Ok(found) => (found.set, found.degraded, None, Some(found.record)),
        Err(e) => {
            log::warn!("{algorithm} failed on {}: {e}", case.cve_id);
            (BTreeSet::new(), false, Some(e), None)
        }
    };
    let hits = matched_truth(&identified, &case.true_vics)
        .into_iter()
        .map(str::to_string)
        .collect();
    CaseOutcome {
        cve_id: case.cve_id.clone(),
        algorithm,
        identified,
        truth: case.true_vics.clone(),
        hits,
        degraded,
        error,
        record,
    }
}

fn row(algorithm: Algorithm, outcomes: &[&CaseOutcome]) -> AlgorithmRow {
    let pairs = || outcomes.iter().map(|o| (&o.identified, &o.truth));
    AlgorithmRow {
        algorithm,
        label: algorithm.label().to_string(),
        standard: compute_metrics(pairs(), Convention::Standard),
        swapped: compute_metrics(pairs(), Convention::Swapped),
        cases: outcomes.len(),
        failed: outcomes.iter().filter(|o| o.error.is_some()).count(),
        degraded: outcomes.iter().filter(|o| o.degraded).count(),
    }
}

/// Evaluates every configured algorithm on every case. Case failures are
/// recorded in the report and count as empty identifications.
pub fn run_evaluation(
    dataset: &str,
    cases: &[PreparedCase],
    skipped: Vec<SkippedCase>,
    config: &EvalConfig,
) -> EvalReport {
    let jobs: Vec<(Algorithm, &PreparedCase)> = config
        .algorithms
        .iter()
        .flat_map(|a| cases.iter().map(move |c| (*a, c)))
        .collect();
    let work = || -> Vec<CaseOutcome> {
        jobs.par_iter()
            .map(|(algorithm, case)| run_case(case, *algorithm, config))
            .collect()
    };
    let per_case = match rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism.max(1))
        .build()
    {
        Ok(pool) => pool.install(work),
        Err(e) => {
            log::warn!("thread pool unavailable ({e}); running sequentially");
            jobs.iter()
                .map(|(algorithm, case)| run_case(case, *algorithm, config))
                .collect()
        }
    };
    let rows = config
        .algorithms
        .iter()
        .map(|a| {
            let mine: Vec<&CaseOutcome> = per_case.iter().filter(|o| o.algorithm == *a).collect();
            row(*a, &mine)
        })
        .collect();
    EvalReport {
        dataset: dataset.to_string(),
        rows,
        per_case,
        skipped,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
}

/// Pre/Re/F1 per algorithm under both conventions.
pub fn render_table(report: &EvalReport, format: TableFormat) -> String {
    let header = [
        "Approach", "Pre", "Re", "F1", "Pre (swapped)", "Re (swapped)", "F1 (swapped)", "Hits", "Cases", "Failed",
    ];
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.label.clone(),
                format!("{:.2}", r.standard.precision),
                format!("{:.2}", r.standard.recall),
                format!("{:.2}", r.standard.f1),
                format!("{:.2}", r.swapped.precision),
                format!("{:.2}", r.swapped.recall),
                format!("{:.2}", r.swapped.f1),
                r.standard.hits.to_string(),
                r.cases.to_string(),
                r.failed.to_string(),
            ]
        })
        .collect();
    match format {
        TableFormat::Markdown => {
            let mut out = format!("Dataset: {}\n\n| {} |\n", report.dataset, header.join(" | "));
            out.push_str(&format!("|{}\n", "---|".repeat(header.len())));
            for r in &rows {
                out.push_str(&format!("| {} |\n", r.join(" | ")));
            }
            if !report.skipped.is_empty() {
                out.push_str(&format!("\nSkipped cases: {}\n", report.skipped.len()));
                for s in &report.skipped {
                    out.push_str(&format!("- {}: {}\n", s.cve_id, s.reason));
                }
            }
            out
        }
        TableFormat::Csv => {
            let mut writer = csv::Writer::from_writer(Vec::new());
            let _ = writer.write_record(header);
            for r in &rows {
                let _ = writer.write_record(r);
            }
            let bytes = writer.into_inner().unwrap_or_default();
            String::from_utf8_lossy(&bytes).into_owned()
        }
    }
}
