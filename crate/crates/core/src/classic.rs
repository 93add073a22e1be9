//! Classic SZZ baselines.
//!
//! All variants start from the lines a fix deletes (modifications are
//! delete+add pairs) and blame them at the fix's first parent:
//!
//! - **B-SZZ** reports the blamed commits as-is.
//! - **AG-SZZ** ignores cosmetic deleted lines and steps past commits whose own
//!   change to the blamed line was only layout.
//! - **MA-SZZ** additionally steps past meta-changes: merges and commits whose
//!   diff of the file carries no behavioral content.
//! - **L-SZZ** / **R-SZZ** reduce the MA-SZZ result to the commit blamed for the
//!   most lines / the most recent commit.
//! - **V-SZZ** keeps re-blaming through rewrites whose similarity to the
//!   previous version stays at or above a threshold, reporting the earliest.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::diff::{
    self, code_signature, cosmetic_flags, is_cosmetic, parse_unified_diff, DeletedLine, FileDiff,
    Lang, LineKind,
};
use crate::repo::{BlameRecord, CommitMeta, RepoError, RepoHandle};

/// Default similarity threshold for V-SZZ line mapping.
pub const DEFAULT_VSZZ_THRESHOLD: f64 = 0.75;
/// Upper bound on backward steps for the iterative variants.
pub const MAX_BACKWARD_STEPS: usize = 200;

#[derive(Debug, Error)]
pub enum SzzError {
    #[error(transparent)]
    Repo(#[from] RepoError),
    #[error("fix commit {0} is a root commit")]
    RootCommitFix(String),
    #[error("no candidates to choose from for {algorithm} on {fix}")]
    EmptyCandidates { algorithm: Algorithm, fix: String },
    #[error("cannot parse diff of {commit}: {source}")]
    Diff {
        commit: String,
        source: diff::MalformedDiff,
    },
}

pub type Result<T, E = SzzError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Bszz,
    Agszz,
    Maszz,
    Lszz,
    Rszz,
    Vszz,
    /// The agent pipeline; not a classic variant but shares the evaluation surface.
    Mas,
}

impl Algorithm {
    pub const CLASSIC: [Algorithm; 6] = [
        Algorithm::Bszz,
        Algorithm::Agszz,
        Algorithm::Maszz,
        Algorithm::Lszz,
        Algorithm::Rszz,
        Algorithm::Vszz,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Bszz => "bszz",
            Algorithm::Agszz => "agszz",
            Algorithm::Maszz => "maszz",
            Algorithm::Lszz => "lszz",
            Algorithm::Rszz => "rszz",
            Algorithm::Vszz => "vszz",
            Algorithm::Mas => "mas",
        }
    }

    /// Display name used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Bszz => "B-SZZ",
            Algorithm::Agszz => "AG-SZZ",
            Algorithm::Maszz => "MA-SZZ",
            Algorithm::Lszz => "L-SZZ",
            Algorithm::Rszz => "R-SZZ",
            Algorithm::Vszz => "V-SZZ",
            Algorithm::Mas => "MAS",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "bszz" => Ok(Algorithm::Bszz),
            "agszz" => Ok(Algorithm::Agszz),
            "maszz" => Ok(Algorithm::Maszz),
            "lszz" => Ok(Algorithm::Lszz),
            "rszz" => Ok(Algorithm::Rszz),
            "vszz" => Ok(Algorithm::Vszz),
            "mas" | "masszz" => Ok(Algorithm::Mas),
            _ => Err(format!("unknown algorithm {s:?}")),
        }
    }
}

/// A deleted line of the fix, keyed by its old-side path and line number.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LineRef {
    pub path: String,
    pub line: u32,
}

impl fmt::Display for LineRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.path, self.line)
    }
}

/// Output of one classic algorithm on one fix commit.
///
/// Serializes as `{algorithm, fix, candidates: [...], per_line: {"path:line": "hash"}}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateSet {
    pub algorithm: Algorithm,
    #[serde(rename = "fix")]
    pub fix_commit: String,
    pub candidates: BTreeSet<String>,
    #[serde(serialize_with = "serialize_per_line")]
    pub per_line: BTreeMap<LineRef, String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn serialize_per_line<S: Serializer>(
    map: &BTreeMap<LineRef, String>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_map(map.iter().map(|(k, v)| (k.to_string(), v)))
}

impl CandidateSet {
    fn from_lines(
        algorithm: Algorithm,
        fix: &str,
        per_line: BTreeMap<LineRef, String>,
        warnings: Vec<String>,
    ) -> Self {
        Self {
            algorithm,
            fix_commit: fix.to_string(),
            candidates: per_line.values().cloned().collect(),
            per_line,
            warnings,
        }
    }

    /// Number of fix lines blamed on each candidate.
    pub fn line_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for c in self.per_line.values() {
            *counts.entry(c.as_str()).or_insert(0) += 1;
        }
        counts
    }
}

/// Runs one classic algorithm. `vszz_threshold` only affects V-SZZ.
pub fn run(
    repo: &RepoHandle,
    algorithm: Algorithm,
    fix: &str,
    vszz_threshold: f64,
) -> Result<CandidateSet> {
    match algorithm {
        Algorithm::Bszz => run_bszz(repo, fix),
        Algorithm::Agszz => run_agszz(repo, fix),
        Algorithm::Maszz => run_maszz(repo, fix),
        Algorithm::Lszz => run_lszz(repo, fix),
        Algorithm::Rszz => run_rszz(repo, fix),
        Algorithm::Vszz => run_vszz(repo, fix, vszz_threshold),
        Algorithm::Mas => unreachable!("the agent pipeline is not a classic algorithm"),
    }
}

struct FixContext {
    meta: CommitMeta,
    parent: String,
    files: Vec<FileDiff>,
}

fn fix_context(repo: &RepoHandle, fix: &str) -> Result<FixContext> {
    let (meta, text) = repo.show_commit(fix)?;
    let parent = meta
        .first_parent()
        .ok_or_else(|| SzzError::RootCommitFix(meta.id.clone()))?
        .to_string();
    let files = parse_unified_diff(&text).map_err(|source| SzzError::Diff {
        commit: meta.id.clone(),
        source,
    })?;
    Ok(FixContext {
        meta,
        parent,
        files,
    })
}

/// Deleted lines that are not blank or comment-only, with `/* */` state
/// tracked per hunk.
fn non_cosmetic_deleted(files: &[FileDiff]) -> Vec<DeletedLine> {
    let mut out = Vec::new();
    for f in files {
        let Some(path) = &f.old_path else { continue };
        let lang = Lang::from_path(path);
        for h in &f.hunks {
            let flags = cosmetic_flags(h, lang);
            for (l, cosmetic) in h.lines.iter().zip(flags) {
                if l.kind == LineKind::Deleted && !cosmetic {
                    out.push(DeletedLine {
                        path: path.clone(),
                        old_no: l.old_no.expect("deleted line has old number"),
                        text: l.text.clone(),
                        hunk_index: h.index,
                    });
                }
            }
        }
    }
    out
}

fn line_ref(d: &DeletedLine) -> LineRef {
    LineRef {
        path: d.path.clone(),
        line: d.old_no,
    }
}

pub fn run_bszz(repo: &RepoHandle, fix: &str) -> Result<CandidateSet> {
    let ctx = fix_context(repo, fix)?;
    let mut per_line = BTreeMap::new();
    for d in diff::deleted_or_modified_lines(&ctx.files) {
        let blame = repo.blame_line(&ctx.parent, &d.path, d.old_no)?;
        per_line.insert(line_ref(&d), blame.commit_id);
    }
    Ok(CandidateSet::from_lines(Algorithm::Bszz, &ctx.meta.id, per_line, Vec::new()))
}

/// The file diff of `commit` (against its first parent) that produced `path`.
fn commit_file_diff(repo: &RepoHandle, commit: &CommitMeta, path: &str) -> Result<Option<FileDiff>> {
    let text = repo.diff_against_parent(commit, 0)?;
    let files = parse_unified_diff(&text).map_err(|source| SzzError::Diff {
        commit: commit.id.clone(),
        source,
    })?;
    Ok(files.into_iter().find(|f| f.new_path.as_deref() == Some(path)))
}

/// If `commit` only re-laid-out the blamed line, returns where the line sat
/// in the commit's first parent.
fn layout_predecessor(fd: &FileDiff, line_no: u32) -> Option<(String, u32)> {
    let old_path = fd.old_path.clone()?;
    let hunk = fd
        .hunks
        .iter()
        .find(|h| h.lines.iter().any(|l| l.new_no == Some(line_no)))?;
    let line = hunk.lines.iter().find(|l| l.new_no == Some(line_no))?;
    if line.kind != LineKind::Added {
        return None;
    }
    let signature = code_signature(&line.text);
    hunk.deleted()
        .find(|d| code_signature(&d.text) == signature)
        .and_then(|d| d.old_no)
        .map(|old| (old_path, old))
}

/// True when the file diff changes nothing but layout and comments.
fn is_content_free(fd: &FileDiff) -> bool {
    let lang = Lang::from_path(fd.display_path());
    let mut removed: Vec<String> = Vec::new();
    let mut added: Vec<String> = Vec::new();
    for h in &fd.hunks {
        for (l, cosmetic) in h.lines.iter().zip(cosmetic_flags(h, lang)) {
            if cosmetic || l.kind == LineKind::Context {
                continue;
            }
            let sig = code_signature(&l.text);
            if sig.is_empty() {
                continue;
            }
            match l.kind {
                LineKind::Deleted => removed.push(sig),
                LineKind::Added => added.push(sig),
                LineKind::Context => {}
            }
        }
    }
    removed.sort();
    added.sort();
    removed == added
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum SkipPolicy {
    /// Step past commits whose change to the line was layout only.
    Layout,
    /// Also step past merges and content-free commits.
    LayoutAndMeta,
}

/// Blames `(path, line)` at `revision` and walks backward past commits the
/// policy considers irrelevant. Returns the final blame and whether the step
/// cap was hit.
fn blame_skipping(
    repo: &RepoHandle,
    revision: &str,
    path: &str,
    line: u32,
    policy: SkipPolicy,
) -> Result<(BlameRecord, bool)> {
    let mut blame = repo.blame_line(revision, path, line)?;
    for _ in 0..MAX_BACKWARD_STEPS {
        let meta = repo.commit_meta(&blame.commit_id)?;
        let Some(parent) = meta.first_parent().map(str::to_string) else {
            return Ok((blame, false));
        };
        let next = if policy == SkipPolicy::LayoutAndMeta && meta.is_merge() {
            // merge: carry the line into the first parent by position/similarity
            diff::map_line_backward(repo, &meta.id, &blame.file_path, blame.line_no, 0.0)?
        } else {
            let Some(fd) = commit_file_diff(repo, &meta, &blame.file_path)? else {
                return Ok((blame, false));
            };
            if policy == SkipPolicy::LayoutAndMeta && is_content_free(&fd) {
                diff::map_through_file_diff(&fd, blame.line_no, 0.0)
                    .or_else(|| layout_predecessor(&fd, blame.line_no))
            } else {
                layout_predecessor(&fd, blame.line_no)
            }
        };
        let Some((old_path, old_line)) = next else {
            return Ok((blame, false));
        };
        if repo.file_at(&parent, &old_path)?.is_none() {
            return Ok((blame, false));
        }
        blame = repo.blame_line(&parent, &old_path, old_line)?;
    }
    Ok((blame, true))
}

fn run_skipping(repo: &RepoHandle, fix: &str, algorithm: Algorithm, policy: SkipPolicy) -> Result<CandidateSet> {
    let ctx = fix_context(repo, fix)?;
    let mut per_line = BTreeMap::new();
    let mut warnings = Vec::new();
    for d in non_cosmetic_deleted(&ctx.files) {
        let (blame, capped) = blame_skipping(repo, &ctx.parent, &d.path, d.old_no, policy)?;
        if capped {
            let msg = format!("{}: step cap {MAX_BACKWARD_STEPS} reached for {}", algorithm, line_ref(&d));
            warn!("{msg}");
            warnings.push(msg);
        }
        per_line.insert(line_ref(&d), blame.commit_id);
    }
    Ok(CandidateSet::from_lines(algorithm, &ctx.meta.id, per_line, warnings))
}

pub fn run_agszz(repo: &RepoHandle, fix: &str) -> Result<CandidateSet> {
    run_skipping(repo, fix, Algorithm::Agszz, SkipPolicy::Layout)
}

pub fn run_maszz(repo: &RepoHandle, fix: &str) -> Result<CandidateSet> {
    run_skipping(repo, fix, Algorithm::Maszz, SkipPolicy::LayoutAndMeta)
}

fn narrow(
    repo: &RepoHandle,
    fix: &str,
    algorithm: Algorithm,
    pick: impl Fn(&[(String, usize, i64)]) -> String,
) -> Result<CandidateSet> {
    let upstream = run_maszz(repo, fix)?;
    if upstream.candidates.is_empty() {
        return Err(SzzError::EmptyCandidates {
            algorithm,
            fix: upstream.fix_commit,
        });
    }
    let mut stats = Vec::new();
    for (commit, lines) in upstream.line_counts() {
        let time = repo.commit_meta(commit)?.author_time;
        stats.push((commit.to_string(), lines, time));
    }
    let chosen = pick(&stats);
    let per_line = upstream
        .per_line
        .into_iter()
        .filter(|(_, c)| *c == chosen)
        .collect();
    Ok(CandidateSet::from_lines(algorithm, &upstream.fix_commit, per_line, upstream.warnings))
}

/// The MA-SZZ candidate blamed for the most lines; ties go to the older commit.
pub fn run_lszz(repo: &RepoHandle, fix: &str) -> Result<CandidateSet> {
    narrow(repo, fix, Algorithm::Lszz, |stats| {
        stats
            .iter()
            .min_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)).then(a.0.cmp(&b.0)))
            .map(|s| s.0.clone())
            .expect("non-empty")
    })
}

/// The most recent MA-SZZ candidate; ties go to the commit blamed for more lines.
pub fn run_rszz(repo: &RepoHandle, fix: &str) -> Result<CandidateSet> {
    narrow(repo, fix, Algorithm::Rszz, |stats| {
        stats
            .iter()
            .min_by(|a, b| b.2.cmp(&a.2).then(b.1.cmp(&a.1)).then(a.0.cmp(&b.0)))
            .map(|s| s.0.clone())
            .expect("non-empty")
    })
}

/// Follows one deleted line back through similar-enough rewrites.
/// Returns the earliest blamed commit and whether the step cap was hit.
pub fn earliest_similar_origin(
    repo: &RepoHandle,
    revision: &str,
    path: &str,
    line: u32,
    threshold: f64,
) -> Result<(BlameRecord, bool)> {
    let mut blame = repo.blame_line(revision, path, line)?;
    for _ in 0..MAX_BACKWARD_STEPS {
        let Some(parent) = repo.first_parent(&blame.commit_id)? else {
            return Ok((blame, false));
        };
        let mapped =
            diff::map_line_backward(repo, &blame.commit_id, &blame.file_path, blame.line_no, threshold)?;
        let Some((old_path, old_line)) = mapped else {
            return Ok((blame, false));
        };
        blame = repo.blame_line(&parent, &old_path, old_line)?;
    }
    Ok((blame, true))
}

pub fn run_vszz(repo: &RepoHandle, fix: &str, threshold: f64) -> Result<CandidateSet> {
    let ctx = fix_context(repo, fix)?;
    let mut per_line = BTreeMap::new();
    let mut warnings = Vec::new();
    for d in diff::deleted_or_modified_lines(&ctx.files) {
        let (blame, capped) = earliest_similar_origin(repo, &ctx.parent, &d.path, d.old_no, threshold)?;
        if capped {
            let msg = format!("vszz: step cap {MAX_BACKWARD_STEPS} reached for {}", line_ref(&d));
            warn!("{msg}");
            warnings.push(msg);
        }
        per_line.insert(line_ref(&d), blame.commit_id);
    }
    Ok(CandidateSet::from_lines(Algorithm::Vszz, &ctx.meta.id, per_line, warnings))
}

/// Exposed for diagnostics: whether a deleted line would be dropped by AG-SZZ.
pub fn is_cosmetic_line(path: &str, text: &str) -> bool {
    is_cosmetic(text, Lang::from_path(path))
}
