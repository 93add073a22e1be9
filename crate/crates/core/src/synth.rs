//! Deterministic construction of small git histories.
//!
//! Histories are written as a `git fast-import` stream with fixed identities
//! and timestamps, so the same script always yields the same commit ids. Used
//! by the test suites and by the checked-in fixture mirrors.

use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};

use crate::repo::RepoError;

const IDENT: &str = "Fixture Author <fixture@example.invalid>";
/// 2017-01-01T00:00:00Z; each commit advances by one hour unless overridden.
const BASE_TIME: i64 = 1_483_228_800;

#[derive(Debug, Clone)]
enum Change {
    Write {
        path: String,
        content: String,
        executable: bool,
    },
    Delete(String),
    Rename {
        from: String,
        to: String,
    },
}

/// One commit in a [`History`]. Parents refer to indexes of earlier commits.
#[derive(Debug, Clone)]
pub struct CommitSpec {
    message: String,
    parents: Vec<usize>,
    time: Option<i64>,
    changes: Vec<Change>,
}

impl CommitSpec {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            parents: Vec::new(),
            time: None,
            changes: Vec::new(),
        }
    }

    pub fn parent(mut self, index: usize) -> Self {
        self.parents.push(index);
        self
    }

    pub fn time(mut self, unix_seconds: i64) -> Self {
        self.time = Some(unix_seconds);
        self
    }

    pub fn write(mut self, path: impl Into<String>, content: impl Into<String>) -> Self {
        self.changes.push(Change::Write {
            path: path.into(),
            content: content.into(),
            executable: false,
        });
        self
    }

    pub fn write_executable(mut self, path: impl Into<String>, content: impl Into<String>) -> Self {
        self.changes.push(Change::Write {
            path: path.into(),
            content: content.into(),
            executable: true,
        });
        self
    }

    pub fn delete(mut self, path: impl Into<String>) -> Self {
        self.changes.push(Change::Delete(path.into()));
        self
    }

    pub fn rename(mut self, from: impl Into<String>, to: impl Into<String>) -> Self {
        self.changes.push(Change::Rename {
            from: from.into(),
            to: to.into(),
        });
        self
    }
}

/// An ordered list of commits; `main` points at the last one.
#[derive(Debug, Clone, Default)]
pub struct History {
    commits: Vec<CommitSpec>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a commit and returns its index. A commit without explicit
    /// parents becomes a root.
    pub fn push(&mut self, spec: CommitSpec) -> usize {
        self.commits.push(spec);
        self.commits.len() - 1
    }

    /// Appends a commit whose single parent is the previously pushed commit.
    pub fn push_linear(&mut self, spec: CommitSpec) -> usize {
        let spec = match self.commits.len() {
            0 => spec,
            n => spec.parent(n - 1),
        };
        self.push(spec)
    }

    pub fn len(&self) -> usize {
        self.commits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commits.is_empty()
    }

    /// Renders the history as a fast-import stream.
    pub fn to_fast_import(&self) -> String {
        let mut out = String::new();
        for (i, c) in self.commits.iter().enumerate() {
            let time = c.time.unwrap_or(BASE_TIME + 3600 * i as i64);
            if c.parents.is_empty() && i > 0 {
                // a later root commit must not inherit the branch tip
                out.push_str("reset refs/heads/main\n");
            }
            out.push_str("commit refs/heads/main\n");
            out.push_str(&format!("mark :{}\n", i + 1));
            out.push_str(&format!("author {IDENT} {time} +0000\n"));
            out.push_str(&format!("committer {IDENT} {time} +0000\n"));
            push_data(&mut out, &c.message);
            if let Some((first, rest)) = c.parents.split_first() {
                out.push_str(&format!("from :{}\n", first + 1));
                for p in rest {
                    out.push_str(&format!("merge :{}\n", p + 1));
                }
            }
            for change in &c.changes {
                match change {
                    Change::Write {
                        path,
                        content,
                        executable,
                    } => {
                        let mode = if *executable { "100755" } else { "100644" };
                        out.push_str(&format!("M {mode} inline {path}\n"));
                        push_data(&mut out, content);
                    }
                    Change::Delete(path) => out.push_str(&format!("D {path}\n")),
                    Change::Rename { from, to } => out.push_str(&format!("R {from} {to}\n")),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Creates a repository at `dir` and returns the commit ids in push order.
    pub fn build(&self, dir: &Path) -> Result<Vec<String>, RepoError> {
        import_stream(dir, &self.to_fast_import())
    }
}

fn push_data(out: &mut String, content: &str) {
    out.push_str(&format!("data {}\n", content.len()));
    out.push_str(content);
    out.push('\n');
}

/// Initializes a repository at `dir`, feeds `stream` to `git fast-import` and
/// returns the ids bound to marks `:1..=:n` in mark order.
pub fn import_stream(dir: &Path, stream: &str) -> Result<Vec<String>, RepoError> {
    std::fs::create_dir_all(dir)?;
    let git = |args: &[&str]| -> Result<std::process::Output, RepoError> {
        let out = Command::new("git")
            .arg("-C")
            .arg(dir)
            .args(args)
            .env("GIT_CONFIG_NOSYSTEM", "1")
            .stdin(Stdio::null())
            .output()?;
        if !out.status.success() {
            return Err(RepoError::Git {
                args: args.join(" "),
                stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
            });
        }
        Ok(out)
    };
    git(&["init", "-q", "-b", "main"])?;
    let marks = dir.join(".git").join("fixture-marks");
    let mut child = Command::new("git")
        .arg("-C")
        .arg(dir)
        .args(["fast-import", "--quiet", "--done"])
        .arg(format!("--export-marks={}", marks.display()))
        .env("GIT_CONFIG_NOSYSTEM", "1")
        .stdin(Stdio::piped())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()?;
    {
        let mut stdin = child.stdin.take().expect("piped stdin");
        stdin.write_all(stream.as_bytes())?;
        if !stream.trim_end().ends_with("done") {
            stdin.write_all(b"done\n")?;
        }
    }
    let out = child.wait_with_output()?;
    if !out.status.success() {
        return Err(RepoError::Git {
            args: "fast-import".into(),
            stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
        });
    }
    let marks = std::fs::read_to_string(&marks)?;
    let mut ids: Vec<(usize, String)> = marks
        .lines()
        .filter_map(|l| {
            let (mark, id) = l.split_once(' ')?;
            Some((mark.trim_start_matches(':').parse().ok()?, id.to_string()))
        })
        .collect();
    ids.sort();
    Ok(ids.into_iter().map(|(_, id)| id).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repo::RepoHandle;

    #[test]
    fn builds_deterministic_linear_history() {
        let mut h = History::new();
        h.push_linear(CommitSpec::new("one").write("a.txt", "x\n"));
        h.push_linear(CommitSpec::new("two").write("a.txt", "x\ny\n"));
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let ids1 = h.build(d1.path()).unwrap();
        let ids2 = h.build(d2.path()).unwrap();
        assert_eq!(ids1, ids2);
        let repo = RepoHandle::open(d1.path(), None).unwrap();
        let meta = repo.commit_meta(&ids1[1]).unwrap();
        assert_eq!(meta.parent_ids, vec![ids1[0].clone()]);
        assert_eq!(meta.message, "two");
        assert_eq!(repo.resolve("main").unwrap(), ids1[1]);
    }

    #[test]
    fn merges_and_extra_roots() {
        let mut h = History::new();
        let a = h.push(CommitSpec::new("a").write("f", "1\n"));
        let b = h.push(CommitSpec::new("b").parent(a).write("g", "2\n"));
        let c = h.push(CommitSpec::new("c").parent(a).write("h", "3\n"));
        let m = h.push(CommitSpec::new("m").parent(b).parent(c).write("h", "3\n"));
        let dir = tempfile::tempdir().unwrap();
        let ids = h.build(dir.path()).unwrap();
        let repo = RepoHandle::open(dir.path(), None).unwrap();
        let meta = repo.commit_meta(&ids[m]).unwrap();
        assert!(meta.is_merge());
        assert_eq!(meta.parent_ids, vec![ids[b].clone(), ids[c].clone()]);
        assert_eq!(repo.file_at(&ids[m], "g").unwrap().as_deref(), Some("2\n"));
    }
}
