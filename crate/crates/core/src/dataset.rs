//! Vulnerability datasets: JSON-lines loading and validation, conversion from
//! CSV exports, and a clone cache for the referenced repositories.

use std::collections::BTreeSet;
use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::metrics::same_commit;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VulnCase {
    pub cve_id: String,
    /// Clone URL, or a local path (relative paths resolve against the dataset file).
    pub repo: String,
    pub fix_commit: String,
    pub true_vics: BTreeSet<String>,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub language: String,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("line {line}: {reason}")]
    Schema { line: usize, reason: String },
    #[error("reading dataset {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn is_commit_id(s: &str) -> bool {
    (4..=40).contains(&s.len()) && s.chars().all(|c| c.is_ascii_hexdigit())
}

impl VulnCase {
    pub fn validate(&self) -> Result<(), String> {
        if self.cve_id.trim().is_empty() {
            return Err("cve_id is empty".into());
        }
        if self.repo.trim().is_empty() {
            return Err("repo is empty".into());
        }
        if !is_commit_id(&self.fix_commit) {
            return Err(format!("fix_commit {:?} is not a commit id", self.fix_commit));
        }
        if self.true_vics.is_empty() {
            return Err("true_vics is empty".into());
        }
        for v in &self.true_vics {
            if !is_commit_id(v) {
                return Err(format!("true_vics entry {v:?} is not a commit id"));
            }
            if same_commit(v, &self.fix_commit) {
                return Err(format!("true_vics contains the fix commit {v}"));
            }
        }
        Ok(())
    }
}

/// Parses JSON-lines text. Blank lines are skipped; line numbers are 1-based.
pub fn parse_dataset(reader: impl BufRead) -> Result<Vec<VulnCase>, DatasetError> {
    let mut cases = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| DatasetError::Io {
            path: format!("<line {line_no}>"),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let case: VulnCase = serde_json::from_str(&line).map_err(|e| DatasetError::Schema {
            line: line_no,
            reason: e.to_string(),
        })?;
        case.validate()
            .map_err(|reason| DatasetError::Schema { line: line_no, reason })?;
        if !seen.insert(case.cve_id.clone()) {
            return Err(DatasetError::Schema {
                line: line_no,
                reason: format!("duplicate cve_id {}", case.cve_id),
            });
        }
        cases.push(case);
    }
    Ok(cases)
}

pub fn load_dataset(path: &Path) -> Result<Vec<VulnCase>, DatasetError> {
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(std::io::BufReader::new(file))
}

pub fn write_dataset(cases: &[VulnCase], mut out: impl Write) -> std::io::Result<()> {
    for c in cases {
        serde_json::to_writer(&mut out, c)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

const COLUMN_ALIASES: &[(&str, &[&str])] = &[
    ("cve_id", &["cve_id", "cve", "cveid", "id"]),
    ("repo", &["repo", "repository", "repo_url", "project", "url"]),
    ("fix_commit", &["fix_commit", "fixing_commit", "fix", "vfc", "fix_hash", "fixing_commit_hash"]),
    ("true_vics", &["true_vics", "inducing_commits", "inducing_commit", "vic", "vics", "bic", "bug_inducing_commits"]),
    ("description", &["description", "cve_description", "summary"]),
    ("language", &["language", "lang"]),
];

/// Converts a CSV export (one row per case, header row required) into
/// JSON-lines cases. Column names are matched case-insensitively against common
/// spellings; multiple inducing commits may be separated by `;`, `,`, `|` or
/// whitespace. `repo_prefix` is prepended to repository names that are not
/// already URLs or paths (e.g. `https://github.com/`).
pub fn convert_csv(input: impl Read, repo_prefix: Option<&str>) -> Result<Vec<VulnCase>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_ascii_lowercase().replace([' ', '-'], "_"))
        .collect();
    let column = |field: &str| {
        let aliases = COLUMN_ALIASES.iter().find(|(f, _)| *f == field).map(|(_, a)| *a)?;
        headers.iter().position(|h| aliases.contains(&h.as_str()))
    };
    let required = ["cve_id", "repo", "fix_commit", "true_vics"];
    let mut idx = Vec::new();
    for field in required {
        idx.push(column(field).ok_or_else(|| DatasetError::Schema {
            line: 1,
            reason: format!("no column for {field}"),
        })?);
    }
    let desc = column("description");
    let lang = column("language");
    let mut cases = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let get = |c: usize| row.get(c).unwrap_or_default().trim().to_string();
        let mut repo = get(idx[1]);
        if let Some(prefix) = repo_prefix {
            let is_ref = repo.contains("://") || repo.starts_with("git@") || repo.starts_with('/') || repo.starts_with('.');
            if !is_ref && !repo.is_empty() {
                repo = format!("{}{}", prefix, repo);
            }
        }
        let case = VulnCase {
            cve_id: get(idx[0]),
            repo,
            fix_commit: get(idx[2]).to_ascii_lowercase(),
            true_vics: get(idx[3])
                .split(|c: char| c == ';' || c == ',' || c == '|' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(str::to_ascii_lowercase)
                .collect(),
            description: desc.map(get).unwrap_or_default(),
            language: lang.map(get).unwrap_or_default(),
        };
        case.validate().map_err(|reason| DatasetError::Schema { line, reason })?;
        cases.push(case);
    }
    Ok(cases)
}

/// Clones shared across runs, one directory per repository URL.
#[derive(Debug, Clone)]
pub struct RepoCache {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedCase {
    pub cve_id: String,
    pub reason: String,
}

fn is_remote(reference: &str) -> bool {
    reference.contains("://") || reference.starts_with("git@")
}

impl RepoCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// Directory a URL is cloned into: the first 16 hex digits of its SHA-256.
    pub fn slot(&self, url: &str) -> PathBuf {
        let digest = Sha256::digest(url.trim().as_bytes());
        let name: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
        self.dir.join(name)
    }

    /// Local path for `reference`, cloning remote repositories on first use.
    pub fn resolve(&self, reference: &str, base_dir: &Path) -> Result<PathBuf, String> {
        if !is_remote(reference) {
            let path = base_dir.join(reference);
            return if path.exists() {
                Ok(path)
            } else {
                Err(format!("repository path {} does not exist", path.display()))
            };
        }
        let slot = self.slot(reference);
        if slot.exists() {
            return Ok(slot);
        }
        std::fs::create_dir_all(&self.dir).map_err(|e| e.to_string())?;
        let staging = slot.with_extension(format!("partial-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&staging);
        log::info!("cloning {reference}");
        let out = Command::new("git")
            .args(["clone", "--quiet", "--mirror", reference])
            .arg(&staging)
            .env("GIT_TERMINAL_PROMPT", "0")
            .stdin(Stdio::null())
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            let _ = std::fs::remove_dir_all(&staging);
            return Err(format!(
                "clone of {reference} failed: {}",
                String::from_utf8_lossy(&out.stderr).trim()
            ));
        }
        match std::fs::rename(&staging, &slot) {
            Ok(()) => Ok(slot),
            // another process finished the same clone first
            Err(_) if slot.exists() => {
                let _ = std::fs::remove_dir_all(&staging);
                Ok(slot)
            }
            Err(e) => Err(e.to_string()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreparedCase {
    pub case: VulnCase,
    pub repo_path: PathBuf,
}

/// Resolves every case's repository; unreachable ones are skipped and reported.
pub fn prepare_cases(
    cases: Vec<VulnCase>,
    cache: &RepoCache,
    base_dir: &Path,
) -> (Vec<PreparedCase>, Vec<SkippedCase>) {
    let mut ready = Vec::new();
    let mut skipped = Vec::new();
    for case in cases {
        match cache.resolve(&case.repo, base_dir) {
            Ok(repo_path) => ready.push(PreparedCase { case, repo_path }),
            Err(reason) => {
                log::warn!("skipping {}: {reason}", case.cve_id);
                skipped.push(SkippedCase {
                    cve_id: case.cve_id,
                    reason,
                });
            }
        }
    }
    (ready, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"cve_id":"CVE-1","repo":"r","fix_commit":"abcdef1","true_vics":["1234567"],"description":"d","language":"java"}"#;

    #[test]
    fn parses_valid_lines() {
        let text = format!("{GOOD}\n\n");
        let cases = parse_dataset(text.as_bytes()).unwrap();
        assert_eq!(cases.len(), 1);
        assert_eq!(cases[0].language, "java");
    }

    #[test]
    fn missing_true_vics_reports_line() {
        let bad = r#"{"cve_id":"CVE-2","repo":"r","fix_commit":"abcdef1"}"#;
        let text = format!("{GOOD}\n{bad}\n");
        match parse_dataset(text.as_bytes()) {
            Err(DatasetError::Schema { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_fix_in_truth_and_bad_hex() {
        let bad = r#"{"cve_id":"C","repo":"r","fix_commit":"abcdef1","true_vics":["abcdef1"]}"#;
        assert!(parse_dataset(bad.as_bytes()).is_err());
        let bad = r#"{"cve_id":"C","repo":"r","fix_commit":"xyz","true_vics":["1234567"]}"#;
        assert!(parse_dataset(bad.as_bytes()).is_err());
        let bad = r#"{"cve_id":"C","repo":"r","fix_commit":"abcdef1","true_vics":[]}"#;
        assert!(parse_dataset(bad.as_bytes()).is_err());
    }

    #[test]
    fn csv_conversion() {
        let csv = "CVE,Repository,Fixing Commit,Inducing Commits,Language\nCVE-9,apache/x,ABCDEF1,1234567;89abcde,java\n";
        let cases = convert_csv(csv.as_bytes(), Some("https://github.com/")).unwrap();
        assert_eq!(cases[0].repo, "https://github.com/apache/x");
        assert_eq!(cases[0].fix_commit, "abcdef1");
        assert_eq!(cases[0].true_vics.len(), 2);
    }

    #[test]
    fn cache_slots_are_stable() {
        let cache = RepoCache::new("/tmp/c");
        assert_eq!(cache.slot("https://x/y"), cache.slot("https://x/y"));
        assert_ne!(cache.slot("https://x/y"), cache.slot("https://x/z"));
    }

    #[test]
    fn missing_local_repo_is_skipped() {
        let case: VulnCase = serde_json::from_str(GOOD).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (ready, skipped) = prepare_cases(vec![case], &RepoCache::new(dir.path()), dir.path());
        assert!(ready.is_empty());
        assert_eq!(skipped.len(), 1);
    }
}
