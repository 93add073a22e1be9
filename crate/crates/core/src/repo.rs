//! Read-only access to a git repository through the local `git` executable.
//!
//! Every query shells out to plumbing or porcelain commands with explicit
//! flags so user configuration (pagers, colors, diff prefixes) cannot leak into
//! the parsed output. Nothing here touches the working tree.

use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Context lines used for commit diffs unless the caller overrides it.
pub const DEFAULT_CONTEXT_LINES: u32 = 5;

#[derive(Debug, Error)]
pub enum RepoError {
    #[error("not a git repository: {0}")]
    NotARepository(PathBuf),
    #[error("unknown commit: {0}")]
    UnknownCommit(String),
    #[error("ambiguous commit prefix {prefix}: matches {candidates:?}")]
    AmbiguousPrefix {
        prefix: String,
        candidates: Vec<String>,
    },
    #[error("file {file} does not exist at {revision}")]
    FileAbsent { revision: String, file: String },
    #[error("line {line} out of range for {file} at {revision} ({len} lines)")]
    LineOutOfRange {
        revision: String,
        file: String,
        line: u32,
        len: usize,
    },
    #[error("git {args}: {stderr}")]
    Git { args: String, stderr: String },
    #[error("unexpected git output: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = RepoError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitMeta {
    pub id: String,
    pub short_id: String,
    /// Author timestamp, seconds since the Unix epoch (UTC).
    pub author_time: i64,
    pub message: String,
    pub parent_ids: Vec<String>,
}

impl CommitMeta {
    pub fn first_parent(&self) -> Option<&str> {
        self.parent_ids.first().map(String::as_str)
    }

    pub fn is_merge(&self) -> bool {
        self.parent_ids.len() >= 2
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlameRecord {
    pub commit_id: String,
    /// Path of the file in `commit_id` (differs from the queried path after a rename).
    pub file_path: String,
    /// 1-based line number in `commit_id`.
    pub line_no: u32,
    pub line_text: String,
}

/// Handle on a local clone. Cheap to clone; holds no open resources.
#[derive(Debug, Clone)]
pub struct RepoHandle {
    root: PathBuf,
    default_context: u32,
}

impl RepoHandle {
    /// Opens the repository at `path`. Discovery does not walk into parent
    /// directories, so a plain directory nested inside some other repository
    /// is still rejected.
    pub fn open(path: impl AsRef<Path>, context_lines: Option<u32>) -> Result<Self> {
        let path = path.as_ref();
        if !path.is_dir() {
            return Err(RepoError::NotARepository(path.to_path_buf()));
        }
        let root = path.canonicalize()?;
        let mut cmd = Command::new("git");
        cmd.arg("-C").arg(&root).args(["rev-parse", "--git-dir"]);
        if let Some(parent) = root.parent() {
            cmd.env("GIT_CEILING_DIRECTORIES", parent);
        }
        let out = cmd.stderr(Stdio::null()).output()?;
        if !out.status.success() {
            return Err(RepoError::NotARepository(root));
        }
        Ok(Self {
            root,
            default_context: context_lines.unwrap_or(DEFAULT_CONTEXT_LINES),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn default_context(&self) -> u32 {
        self.default_context
    }

    fn command(&self) -> Command {
        let mut cmd = Command::new("git");
        cmd.arg("-C")
            .arg(&self.root)
            .args(["-c", "core.quotepath=false", "--no-pager"])
            .env("GIT_CONFIG_NOSYSTEM", "1")
            .env("GIT_TERMINAL_PROMPT", "0")
            .env("LC_ALL", "C");
        cmd
    }

    fn run(&self, args: &[&str]) -> Result<Vec<u8>> {
        let out = self.command().args(args).stdin(Stdio::null()).output()?;
        if !out.status.success() {
            return Err(RepoError::Git {
                args: args.join(" "),
                stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
            });
        }
        Ok(out.stdout)
    }

    fn run_text(&self, args: &[&str]) -> Result<String> {
        Ok(String::from_utf8_lossy(&self.run(args)?).into_owned())
    }

    /// Resolves a full id, unique hex prefix or symbolic revision to a full commit id.
    pub fn resolve(&self, id_or_prefix: &str) -> Result<String> {
        let spec = id_or_prefix.trim();
        let unknown = || RepoError::UnknownCommit(spec.to_string());
        if spec.is_empty() || spec.starts_with('-') {
            return Err(unknown());
        }
        let is_hex = spec.chars().all(|c| c.is_ascii_hexdigit());
        if is_hex && spec.len() >= 4 && spec.len() < 40 {
            let listing = self
                .run_text(&["rev-parse", &format!("--disambiguate={spec}")])
                .map_err(|_| unknown())?;
            let objects: Vec<&str> = listing.lines().filter(|l| !l.is_empty()).collect();
            let mut commits = Vec::new();
            for object in objects {
                if self.run_text(&["cat-file", "-t", object])?.trim() == "commit" {
                    commits.push(object.to_string());
                }
            }
            return match commits.len() {
                0 => Err(unknown()),
                1 => Ok(commits.remove(0)),
                _ => Err(RepoError::AmbiguousPrefix {
                    prefix: spec.to_string(),
                    candidates: commits,
                }),
            };
        }
        let id = self
            .run_text(&["rev-parse", "--verify", "--quiet", &format!("{spec}^{{commit}}")])
            .map_err(|_| unknown())?;
        let id = id.trim();
        if id.is_empty() {
            return Err(unknown());
        }
        Ok(id.to_string())
    }

    pub fn commit_meta(&self, id_or_prefix: &str) -> Result<CommitMeta> {
        let id = self.resolve(id_or_prefix)?;
        let raw = self.run_text(&["show", "-s", "--format=%H%x00%h%x00%at%x00%P%x00%B", &id])?;
        let mut parts = raw.splitn(5, '\0');
        let mut field = || {
            parts
                .next()
                .ok_or_else(|| RepoError::Parse(format!("commit header for {id}")))
        };
        let full = field()?.to_string();
        let short_id = field()?.to_string();
        let author_time = field()?
            .trim()
            .parse::<i64>()
            .map_err(|e| RepoError::Parse(e.to_string()))?;
        let parent_ids = field()?.split_whitespace().map(str::to_string).collect();
        let message = field()?.trim_end_matches('\n').to_string();
        Ok(CommitMeta {
            id: full,
            short_id,
            author_time,
            message,
            parent_ids,
        })
    }

    pub fn first_parent(&self, id: &str) -> Result<Option<String>> {
        Ok(self.commit_meta(id)?.parent_ids.into_iter().next())
    }

    fn empty_tree(&self) -> Result<String> {
        Ok(self
            .run_text(&["hash-object", "-t", "tree", "/dev/null"])?
            .trim()
            .to_string())
    }

    /// Commit metadata plus its unified diff against the first parent (or the
    /// empty tree for a root commit), rendered with the handle's default context.
    pub fn show_commit(&self, id_or_prefix: &str) -> Result<(CommitMeta, String)> {
        let meta = self.commit_meta(id_or_prefix)?;
        let diff = self.diff_against_parent(&meta, self.default_context)?;
        Ok((meta, diff))
    }

    /// Diff of `meta` against its first parent with an explicit context width.
    pub fn diff_against_parent(&self, meta: &CommitMeta, context: u32) -> Result<String> {
        let base = match meta.first_parent() {
            Some(p) => p.to_string(),
            None => self.empty_tree()?,
        };
        self.diff_between(&base, &meta.id, context)
    }

    /// Unified diff between two tree-ish revisions.
    pub fn diff_between(&self, base: &str, target: &str, context: u32) -> Result<String> {
        let unified = format!("-U{context}");
        self.run_text(&[
            "diff",
            "--no-color",
            "--no-ext-diff",
            "--no-textconv",
            "-M",
            "--src-prefix=a/",
            "--dst-prefix=b/",
            &unified,
            base,
            target,
            "--",
        ])
    }

    /// Full file content at `revision`, or `None` when the path is not present there.
    pub fn file_at(&self, revision: &str, file: &str) -> Result<Option<String>> {
        let id = self.resolve(revision)?;
        let spec = format!("{id}:{file}");
        let kind = self
            .command()
            .args(["cat-file", "-t", &spec])
            .stdin(Stdio::null())
            .stderr(Stdio::null())
            .output()?;
        if !kind.status.success() || String::from_utf8_lossy(&kind.stdout).trim() != "blob" {
            return Ok(None);
        }
        let bytes = self.run(&["cat-file", "blob", &spec])?;
        Ok(Some(String::from_utf8_lossy(&bytes).into_owned()))
    }

    /// Lines of `file` at `revision`, erroring with `FileAbsent` when missing.
    pub fn lines_at(&self, revision: &str, file: &str) -> Result<Vec<String>> {
        match self.file_at(revision, file)? {
            Some(text) => Ok(split_lines(&text).into_iter().map(str::to_string).collect()),
            None => Err(RepoError::FileAbsent {
                revision: revision.to_string(),
                file: file.to_string(),
            }),
        }
    }

    /// Blames a single line. Renames are followed; copies are not.
    pub fn blame_line(&self, revision: &str, file: &str, line: u32) -> Result<BlameRecord> {
        let id = self.resolve(revision)?;
        let lines = self.lines_at(&id, file)?;
        if line == 0 || line as usize > lines.len() {
            return Err(RepoError::LineOutOfRange {
                revision: id,
                file: file.to_string(),
                line,
                len: lines.len(),
            });
        }
        let range = format!("{line},{line}");
        let out = self.run_text(&["blame", "--porcelain", "-L", &range, &id, "--", file])?;
        parse_porcelain_blame(&out)
    }

    /// True iff `a` is reachable from `b` through parent edges (reflexive).
    pub fn is_ancestor(&self, a: &str, b: &str) -> Result<bool> {
        let a = self.resolve(a)?;
        let b = self.resolve(b)?;
        if a == b {
            return Ok(true);
        }
        let status = self
            .command()
            .args(["merge-base", "--is-ancestor", &a, &b])
            .stdin(Stdio::null())
            .stderr(Stdio::null())
            .status()?;
        match status.code() {
            Some(0) => Ok(true),
            Some(1) => Ok(false),
            _ => Err(RepoError::Git {
                args: format!("merge-base --is-ancestor {a} {b}"),
                stderr: format!("exit status {status}"),
            }),
        }
    }

    /// Paths of all blobs tracked at `revision`, sorted.
    pub fn tracked_files(&self, revision: &str) -> Result<Vec<String>> {
        let id = self.resolve(revision)?;
        let out = self.run(&["ls-tree", "-r", "-z", "--name-only", &id])?;
        let mut files: Vec<String> = out
            .split(|b| *b == 0)
            .filter(|s| !s.is_empty())
            .map(|s| String::from_utf8_lossy(s).into_owned())
            .collect();
        files.sort();
        Ok(files)
    }

    /// Fixed-string, case-sensitive search over text files at `revision`.
    /// Returns `(path, line_no, text)` sorted by path then line.
    pub fn grep_fixed(&self, revision: &str, needle: &str) -> Result<Vec<(String, u32, String)>> {
        let id = self.resolve(revision)?;
        let out = self
            .command()
            .args(["grep", "-n", "-I", "-F", "--null", "--no-color", "-e", needle, &id, "--"])
            .stdin(Stdio::null())
            .output()?;
        match out.status.code() {
            Some(0) => {}
            Some(1) => return Ok(Vec::new()),
            _ => {
                return Err(RepoError::Git {
                    args: format!("grep {needle}"),
                    stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
                })
            }
        }
        let text = String::from_utf8_lossy(&out.stdout);
        let prefix = format!("{id}:");
        let mut hits = Vec::new();
        for record in text.split('\n').filter(|l| !l.is_empty()) {
            let mut fields = record.splitn(3, '\0');
            let (Some(path), Some(line), Some(content)) = (fields.next(), fields.next(), fields.next())
            else {
                return Err(RepoError::Parse(format!("grep record {record:?}")));
            };
            let path = path.strip_prefix(&prefix).unwrap_or(path);
            let line = line
                .parse::<u32>()
                .map_err(|e| RepoError::Parse(e.to_string()))?;
            hits.push((path.to_string(), line, content.to_string()));
        }
        hits.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
        Ok(hits)
    }
}

/// Splits file content into lines the way git numbers them: a trailing
/// newline does not start a new line, and `\r` is kept as content.
pub fn split_lines(text: &str) -> Vec<&str> {
    if text.is_empty() {
        return Vec::new();
    }
    let body = text.strip_suffix('\n').unwrap_or(text);
    body.split('\n').collect()
}

fn parse_porcelain_blame(out: &str) -> Result<BlameRecord> {
    let mut lines = out.lines();
    let header = lines
        .next()
        .ok_or_else(|| RepoError::Parse("empty blame output".into()))?;
    let mut fields = header.split_whitespace();
    let commit_id = fields
        .next()
        .ok_or_else(|| RepoError::Parse(header.to_string()))?
        .to_string();
    let line_no = fields
        .next()
        .and_then(|s| s.parse::<u32>().ok())
        .ok_or_else(|| RepoError::Parse(header.to_string()))?;
    let mut file_path = None;
    let mut line_text = None;
    for line in lines {
        if let Some(text) = line.strip_prefix('\t') {
            line_text = Some(text.to_string());
            break;
        }
        if let Some(name) = line.strip_prefix("filename ") {
            file_path = Some(name.to_string());
        }
    }
    Ok(BlameRecord {
        commit_id,
        file_path: file_path.ok_or_else(|| RepoError::Parse("blame without filename".into()))?,
        line_no,
        line_text: line_text.ok_or_else(|| RepoError::Parse("blame without content".into()))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_lines_matches_git_numbering() {
        assert!(split_lines("").is_empty());
        assert_eq!(split_lines("a\nb\n"), vec!["a", "b"]);
        assert_eq!(split_lines("a\nb"), vec!["a", "b"]);
        assert_eq!(split_lines("\n"), vec![""]);
        assert_eq!(split_lines("a\r\n"), vec!["a\r"]);
    }

    #[test]
    fn porcelain_parse() {
        let out = "0123456789012345678901234567890123456789 7 3 1\nauthor A\nfilename src/x.c\n\tint x;\n";
        let rec = parse_porcelain_blame(out).unwrap();
        assert_eq!(rec.line_no, 7);
        assert_eq!(rec.file_path, "src/x.c");
        assert_eq!(rec.line_text, "int x;");
    }

    #[test]
    fn open_rejects_plain_directory() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            RepoHandle::open(dir.path(), None),
            Err(RepoError::NotARepository(_))
        ));
        assert!(matches!(
            RepoHandle::open(dir.path().join("missing"), None),
            Err(RepoError::NotARepository(_))
        ));
    }
}
