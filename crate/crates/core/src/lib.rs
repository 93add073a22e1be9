//! Vulnerability-inducing commit identification.
//!
//! Given a vulnerability-fixing commit, the crate offers two families of
//! algorithms for locating the commit(s) that introduced the flaw:
//!
//! - [`classic`]: deterministic SZZ baselines (B, AG, MA, L, R and V variants)
//!   built on `git blame` and line mapping.
//! - [`pipeline`]: an agent-driven flow that derives a verified root cause,
//!   selects anchor statements from the fix's hunks and walks history backward
//!   one blamed commit at a time until the vulnerability is no longer present.
//!
//! All repository access goes through [`repo::RepoHandle`]; all model access
//! goes through the [`llm::ChatBackend`] trait, which has a deterministic replay
//! implementation for offline runs.

pub mod agent;
pub mod anchor;
pub mod classic;
pub mod dataset;
pub mod diff;
pub mod eval;
pub mod llm;
pub mod metrics;
pub mod pipeline;
pub mod prompts;
pub mod repo;
pub mod root_cause;
pub mod sanitize;
pub mod structured;
pub mod synth;
pub mod tools;
pub mod trace;

pub use classic::{Algorithm, CandidateSet};
pub use diff::{ChangedLine, FileDiff, Hunk, LineKind};
pub use llm::{ChatBackend, ChatRequest, ChatResponse, ReplayBackend, Transcript};
pub use pipeline::{CaseInput, CaseRecord, Pipeline, PipelineConfig};
pub use repo::{BlameRecord, CommitMeta, RepoError, RepoHandle};
pub use trace::{TraceResult, VicResult};
