//! Unified diff model.
//!
//! Parses `git diff` output into files, hunks and classified lines, renders it
//! back, and provides the line-level helpers the SZZ variants share: cosmetic
//! line detection, edit-distance similarity and backward line mapping through
//! a single commit.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::repo::{RepoError, RepoHandle};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("malformed diff at line {line}: {reason}")]
pub struct MalformedDiff {
    /// 1-based line of the diff text that could not be interpreted.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineKind {
    Added,
    Deleted,
    Context,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangedLine {
    pub kind: LineKind,
    pub old_no: Option<u32>,
    pub new_no: Option<u32>,
    pub text: String,
    /// Followed by `\ No newline at end of file`.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub no_newline: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hunk {
    pub old_start: u32,
    pub old_len: u32,
    pub new_start: u32,
    pub new_len: u32,
    pub lines: Vec<ChangedLine>,
    /// Position of the hunk within the whole diff, counting across files.
    #[serde(skip)]
    pub index: usize,
    /// Function context git prints after the closing `@@`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section: Option<String>,
}

impl Hunk {
    pub fn deleted(&self) -> impl Iterator<Item = &ChangedLine> {
        self.lines.iter().filter(|l| l.kind == LineKind::Deleted)
    }

    pub fn added(&self) -> impl Iterator<Item = &ChangedLine> {
        self.lines.iter().filter(|l| l.kind == LineKind::Added)
    }

    pub fn header(&self) -> String {
        let mut h = format!(
            "@@ -{},{} +{},{} @@",
            self.old_start, self.old_len, self.new_start, self.new_len
        );
        if let Some(section) = &self.section {
            h.push(' ');
            h.push_str(section);
        }
        h
    }

    /// True when `line_no` (new-file numbering) falls before this hunk's change.
    fn precedes_new(&self, line_no: u32) -> bool {
        line_no < self.new_start + u32::from(self.new_len == 0)
    }

    fn covers_new(&self, line_no: u32) -> bool {
        self.new_len > 0 && line_no >= self.new_start && line_no < self.new_start + self.new_len
    }

    /// Old-file lines spanned by this hunk (context and deleted).
    pub fn covers_old(&self, line_no: u32) -> bool {
        self.old_len > 0 && line_no >= self.old_start && line_no < self.old_start + self.old_len
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDiff {
    pub old_path: Option<String>,
    pub new_path: Option<String>,
    pub hunks: Vec<Hunk>,
}

impl FileDiff {
    /// The path a reader would use to name the file: new path, or old path for deletions.
    pub fn display_path(&self) -> &str {
        self.new_path
            .as_deref()
            .or(self.old_path.as_deref())
            .unwrap_or_default()
    }
}

/// JSON document wrapping a parsed diff: `{"files": [...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffDocument {
    pub files: Vec<FileDiff>,
}

impl DiffDocument {
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        let mut doc: DiffDocument = serde_json::from_str(text)?;
        renumber(&mut doc.files);
        Ok(doc)
    }
}

fn renumber(files: &mut [FileDiff]) {
    for (index, hunk) in files.iter_mut().flat_map(|f| f.hunks.iter_mut()).enumerate() {
        hunk.index = index;
    }
}

fn strip_side(path: &str, prefix: &str) -> Option<String> {
    let path = path.trim_end_matches('\t');
    let path = path.split('\t').next().unwrap_or(path);
    let path = unquote(path);
    if path == "/dev/null" {
        return None;
    }
    Some(path.strip_prefix(prefix).unwrap_or(&path).to_string())
}

fn unquote(s: &str) -> String {
    match s.strip_prefix('"').and_then(|s| s.strip_suffix('"')) {
        Some(inner) => inner.replace("\\\"", "\"").replace("\\\\", "\\"),
        None => s.to_string(),
    }
}

/// Splits the `a/x b/x` tail of a `diff --git` line. Only the symmetric form
/// can be split unambiguously; other forms rely on later `---`/`+++` lines.
fn paths_from_git_header(rest: &str) -> Option<(String, String)> {
    let rest = rest.trim();
    if let Some(stripped) = rest.strip_prefix("a/") {
        let len = stripped.len();
        // "P b/P" has length 2|P| + 3
        if len >= 3 && (len - 3) % 2 == 0 {
            let half = (len - 3) / 2;
            let (left, right) = stripped.split_at(half);
            if right.strip_prefix(" b/") == Some(left) {
                return Some((left.to_string(), left.to_string()));
            }
        }
    }
    None
}

fn parse_range(s: &str) -> Option<(u32, u32)> {
    match s.split_once(',') {
        Some((start, len)) => Some((start.parse().ok()?, len.parse().ok()?)),
        None => Some((s.parse().ok()?, 1)),
    }
}

fn parse_hunk_header(line: &str) -> Option<(u32, u32, u32, u32, Option<String>)> {
    let rest = line.strip_prefix("@@ -")?;
    let (old, rest) = rest.split_once(" +")?;
    let (new, tail) = rest.split_once(" @@")?;
    let (old_start, old_len) = parse_range(old)?;
    let (new_start, new_len) = parse_range(new)?;
    let section = tail.strip_prefix(' ').filter(|s| !s.is_empty()).map(str::to_string);
    Some((old_start, old_len, new_start, new_len, section))
}

/// Parses unified diff text (as produced by `git diff`) into per-file diffs.
/// Hunk indexes are assigned in file order then hunk order.
pub fn parse_unified_diff(text: &str) -> Result<Vec<FileDiff>, MalformedDiff> {
    let lines: Vec<&str> = text.split('\n').collect();
    // a trailing newline yields one empty trailing element
    let total = if text.ends_with('\n') { lines.len() - 1 } else { lines.len() };
    let mut files: Vec<FileDiff> = Vec::new();
    let mut i = 0;
    let err = |line: usize, reason: &str| MalformedDiff {
        line: line + 1,
        reason: reason.to_string(),
    };

    while i < total {
        let line = lines[i];
        if let Some(rest) = line.strip_prefix("diff --git ") {
            let (old, new) = paths_from_git_header(rest).unzip();
            files.push(FileDiff {
                old_path: old,
                new_path: new,
                hunks: Vec::new(),
            });
            i += 1;
            continue;
        }
        if line.starts_with("--- ") && i + 1 < total && lines[i + 1].starts_with("+++ ") {
            let old = strip_side(&line[4..], "a/");
            let new = strip_side(&lines[i + 1][4..], "b/");
            // a `---` line opens a new file unless it completes the current git header
            let reuse = matches!(files.last(), Some(f) if f.hunks.is_empty());
            if reuse {
                let f = files.last_mut().unwrap();
                f.old_path = old;
                f.new_path = new;
            } else {
                files.push(FileDiff {
                    old_path: old,
                    new_path: new,
                    hunks: Vec::new(),
                });
            }
            i += 2;
            continue;
        }
        if line.starts_with("@@ ") {
            let Some((old_start, old_len, new_start, new_len, section)) = parse_hunk_header(line)
            else {
                return Err(err(i, "bad hunk header"));
            };
            let Some(file) = files.last_mut() else {
                return Err(err(i, "hunk before any file header"));
            };
            let header_line = i;
            i += 1;
            let mut body = Vec::new();
            let (mut old_left, mut new_left) = (old_len, new_len);
            let mut old_no = if old_len == 0 { old_start + 1 } else { old_start };
            let mut new_no = if new_len == 0 { new_start + 1 } else { new_start };
            while old_left > 0 || new_left > 0 {
                if i >= total {
                    return Err(err(i.min(total.saturating_sub(1)), "hunk body truncated"));
                }
                let raw = lines[i];
                let (kind, content) = match raw.as_bytes().first() {
                    Some(b' ') => (LineKind::Context, &raw[1..]),
                    Some(b'-') => (LineKind::Deleted, &raw[1..]),
                    Some(b'+') => (LineKind::Added, &raw[1..]),
                    Some(b'\\') => {
                        mark_no_newline(&mut body);
                        i += 1;
                        continue;
                    }
                    None => (LineKind::Context, ""),
                    _ => return Err(err(i, "unexpected line inside hunk")),
                };
                let entry = match kind {
                    LineKind::Context => {
                        if old_left == 0 || new_left == 0 {
                            return Err(err(i, "context line exceeds hunk counts"));
                        }
                        old_left -= 1;
                        new_left -= 1;
                        old_no += 1;
                        new_no += 1;
                        ChangedLine {
                            kind,
                            old_no: Some(old_no - 1),
                            new_no: Some(new_no - 1),
                            text: content.to_string(),
                            no_newline: false,
                        }
                    }
                    LineKind::Deleted => {
                        if old_left == 0 {
                            return Err(err(i, "deleted line exceeds hunk old length"));
                        }
                        old_left -= 1;
                        old_no += 1;
                        ChangedLine {
                            kind,
                            old_no: Some(old_no - 1),
                            new_no: None,
                            text: content.to_string(),
                            no_newline: false,
                        }
                    }
                    LineKind::Added => {
                        if new_left == 0 {
                            return Err(err(i, "added line exceeds hunk new length"));
                        }
                        new_left -= 1;
                        new_no += 1;
                        ChangedLine {
                            kind,
                            old_no: None,
                            new_no: Some(new_no - 1),
                            text: content.to_string(),
                            no_newline: false,
                        }
                    }
                };
                body.push(entry);
                i += 1;
            }
            if i < total && lines[i].starts_with('\\') {
                mark_no_newline(&mut body);
                i += 1;
            }
            if let Some(prev) = file.hunks.last() {
                if old_len > 0 && prev.old_len > 0 && old_start < prev.old_start + prev.old_len {
                    return Err(err(header_line, "overlapping or unordered hunks"));
                }
            }
            file.hunks.push(Hunk {
                old_start,
                old_len,
                new_start,
                new_len,
                lines: body,
                index: 0,
                section,
            });
            continue;
        }
        // extended headers (index, mode, rename, similarity, binary notices)
        if let Some(file) = files.last_mut() {
            if let Some(p) = line.strip_prefix("rename from ") {
                file.old_path = Some(unquote(p));
            } else if let Some(p) = line.strip_prefix("rename to ") {
                file.new_path = Some(unquote(p));
            } else if line.starts_with("new file mode") {
                file.old_path = None;
            } else if line.starts_with("deleted file mode") {
                file.new_path = None;
            } else if let Some(rest) = line.strip_prefix("Binary files ") {
                if let Some((old, new)) = rest.trim_end_matches(" differ").split_once(" and ") {
                    file.old_path = strip_side(old, "a/");
                    file.new_path = strip_side(new, "b/");
                }
            }
        } else if !line.trim().is_empty() && !is_preamble(line) {
            return Err(err(i, "content before first file header"));
        }
        i += 1;
    }
    for (n, f) in files.iter().enumerate() {
        if f.old_path.is_none() && f.new_path.is_none() {
            return Err(MalformedDiff {
                line: 0,
                reason: format!("file #{n} has neither old nor new path"),
            });
        }
    }
    renumber(&mut files);
    Ok(files)
}

fn is_preamble(line: &str) -> bool {
    line.starts_with("index ") || line.starts_with("From ") || line.starts_with("commit ")
}

fn mark_no_newline(body: &mut [ChangedLine]) {
    if let Some(last) = body.last_mut() {
        last.no_newline = true;
    }
}

/// Renders a parsed diff back to unified text. File headers are normalized to
/// `diff --git` / `---` / `+++`; hunk bodies are reproduced exactly.
pub fn render_unified_diff(files: &[FileDiff]) -> String {
    let mut out = String::new();
    for f in files {
        let old = f.old_path.as_deref().or(f.new_path.as_deref()).unwrap_or_default();
        let new = f.new_path.as_deref().or(f.old_path.as_deref()).unwrap_or_default();
        let _ = writeln!(out, "diff --git a/{old} b/{new}");
        match &f.old_path {
            Some(p) => {
                let _ = writeln!(out, "--- a/{p}");
            }
            None => out.push_str("--- /dev/null\n"),
        }
        match &f.new_path {
            Some(p) => {
                let _ = writeln!(out, "+++ b/{p}");
            }
            None => out.push_str("+++ /dev/null\n"),
        }
        for h in &f.hunks {
            out.push_str(&render_hunk(h));
        }
    }
    out
}

pub fn render_hunk(h: &Hunk) -> String {
    let mut out = h.header();
    out.push('\n');
    for l in &h.lines {
        out.push(match l.kind {
            LineKind::Added => '+',
            LineKind::Deleted => '-',
            LineKind::Context => ' ',
        });
        out.push_str(&l.text);
        out.push('\n');
        if l.no_newline {
            out.push_str("\\ No newline at end of file\n");
        }
    }
    out
}

/// A line removed (or modified) by a diff, in old-file coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeletedLine {
    pub path: String,
    pub old_no: u32,
    pub text: String,
    pub hunk_index: usize,
}

/// All deleted lines, in file then line order. Modifications show up as a
/// deletion plus an addition, so they are included.
pub fn deleted_or_modified_lines(files: &[FileDiff]) -> Vec<DeletedLine> {
    let mut out = Vec::new();
    for f in files {
        let Some(path) = &f.old_path else { continue };
        for h in &f.hunks {
            for l in h.deleted() {
                out.push(DeletedLine {
                    path: path.clone(),
                    old_no: l.old_no.expect("deleted line has old number"),
                    text: l.text.clone(),
                    hunk_index: h.index,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lang {
    CLike,
    Java,
    Unknown,
}

impl Lang {
    pub fn from_path(path: &str) -> Lang {
        let ext = path.rsplit_once('.').map(|(_, e)| e.to_ascii_lowercase());
        match ext.as_deref() {
            Some("java" | "kt" | "kts" | "scala" | "groovy") => Lang::Java,
            Some(
                "c" | "h" | "cc" | "cpp" | "cxx" | "hpp" | "hh" | "hxx" | "inl" | "m" | "mm" | "cs"
                | "js" | "jsx" | "ts" | "tsx" | "go" | "rs" | "swift" | "php",
            ) => Lang::CLike,
            _ => Lang::Unknown,
        }
    }
}

/// Stateless check: blank, whitespace-only, or wholly a comment.
pub fn is_cosmetic(text: &str, lang: Lang) -> bool {
    let t = text.trim();
    if t.is_empty() {
        return true;
    }
    if lang == Lang::Unknown {
        return false;
    }
    if t.starts_with("//") || t.starts_with("*/") || t == "*" {
        return true;
    }
    if let Some(rest) = t.strip_prefix("/*") {
        // an unterminated opener is comment to end of line; a closed one must end the line
        return match rest.find("*/") {
            None => true,
            Some(end) => rest[end + 2..].trim().is_empty() || is_cosmetic(&rest[end + 2..], lang),
        };
    }
    // `* text` continuation lines; `*p = x;` style dereferences end like code
    if let Some(rest) = t.strip_prefix('*') {
        let tail = rest.trim_end();
        let code_like = tail.ends_with(';') || tail.ends_with('{') || tail.ends_with(')');
        return (rest.starts_with(' ') || rest.starts_with('*')) && !code_like;
    }
    false
}

/// Per-line cosmetic flags for a hunk, tracking `/* ... */` state across the
/// hunk's lines. State at the hunk start is taken to be outside a comment.
/// Deleted and added lines follow their own side's state.
pub fn cosmetic_flags(hunk: &Hunk, lang: Lang) -> Vec<bool> {
    if lang == Lang::Unknown {
        return hunk.lines.iter().map(|l| is_cosmetic(&l.text, lang)).collect();
    }
    let mut old_in_block = false;
    let mut new_in_block = false;
    hunk.lines
        .iter()
        .map(|l| {
            let (on_old, on_new) = match l.kind {
                LineKind::Context => (true, true),
                LineKind::Deleted => (true, false),
                LineKind::Added => (false, true),
            };
            let in_block = if on_old { old_in_block } else { new_in_block };
            let (flag, after) = classify_with_state(&l.text, in_block, lang);
            if on_old {
                old_in_block = after;
            }
            if on_new {
                new_in_block = after;
            }
            flag
        })
        .collect()
}

fn classify_with_state(text: &str, in_block: bool, lang: Lang) -> (bool, bool) {
    let t = text.trim();
    if in_block {
        return match t.find("*/") {
            None => (true, true),
            Some(end) => {
                let rest = &t[end + 2..];
                let (flag, after) = classify_with_state(rest, false, lang);
                (rest.trim().is_empty() || flag, after)
            }
        };
    }
    (is_cosmetic(t, lang), opens_block(t))
}

/// Whether a line outside any comment leaves a `/*` block open at its end.
fn opens_block(line: &str) -> bool {
    let chars: Vec<char> = line.chars().collect();
    let (mut in_string, mut in_block) = (false, false);
    let mut i = 0;
    while i < chars.len() {
        let next = chars.get(i + 1).copied();
        match (chars[i], next) {
            ('*', Some('/')) if in_block => {
                in_block = false;
                i += 1;
            }
            _ if in_block => {}
            ('"', _) if i == 0 || chars[i - 1] != '\\' => in_string = !in_string,
            ('/', Some('/')) if !in_string => break,
            ('/', Some('*')) if !in_string => {
                in_block = true;
                i += 1;
            }
            _ => {}
        }
        i += 1;
    }
    in_block
}

/// Removes whitespace and a trailing `//` comment (outside string literals),
/// yielding the part of a line that affects program behavior.
pub fn code_signature(text: &str) -> String {
    let mut out = String::new();
    let mut in_string = false;
    let mut prev = '\0';
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '"' && prev != '\\' {
            in_string = !in_string;
        }
        if !in_string && c == '/' && chars.peek() == Some(&'/') {
            break;
        }
        if !c.is_whitespace() || in_string {
            out.push(c);
        }
        prev = c;
    }
    out
}

/// `1 - lev(a, b) / max(|a|, |b|)` over trimmed text, counted in chars.
/// Two empty strings are identical (1.0).
pub fn line_similarity(a: &str, b: &str) -> f64 {
    let (a, b) = (a.trim(), b.trim());
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - strsim::levenshtein(a, b) as f64 / longest as f64
}

/// Where a line of `file` at `commit` lived in the commit's first parent.
///
/// Unchanged lines map through hunk offsets. A line added by `commit` maps to
/// the most similar deleted line of the same hunk when that similarity reaches
/// `threshold`; otherwise the line is considered introduced by `commit` and
/// `None` is returned. Root commits and newly created files also yield `None`.
pub fn map_line_backward(
    repo: &RepoHandle,
    commit: &str,
    file: &str,
    line_no: u32,
    threshold: f64,
) -> Result<Option<(String, u32)>, RepoError> {
    let meta = repo.commit_meta(commit)?;
    if repo.file_at(&meta.id, file)?.is_none() {
        return Err(RepoError::FileAbsent {
            revision: meta.id,
            file: file.to_string(),
        });
    }
    let Some(_) = meta.first_parent() else {
        return Ok(None);
    };
    let text = repo.diff_against_parent(&meta, 0)?;
    let files = parse_unified_diff(&text).map_err(|e| RepoError::Parse(e.to_string()))?;
    let Some(fd) = files.iter().find(|f| f.new_path.as_deref() == Some(file)) else {
        return Ok(Some((file.to_string(), line_no)));
    };
    Ok(map_through_file_diff(fd, line_no, threshold))
}

/// Pure part of [`map_line_backward`]: maps a new-side line number through one file diff.
pub fn map_through_file_diff(fd: &FileDiff, line_no: u32, threshold: f64) -> Option<(String, u32)> {
    let old_path = fd.old_path.clone()?;
    let mut offset: i64 = 0;
    for h in &fd.hunks {
        if h.precedes_new(line_no) {
            break;
        }
        if h.covers_new(line_no) {
            let target = h.lines.iter().find(|l| l.new_no == Some(line_no))?;
            if let Some(old) = target.old_no {
                return Some((old_path, old));
            }
            let mut best: Option<(f64, u32)> = None;
            for d in h.deleted() {
                let sim = line_similarity(&target.text, &d.text);
                if best.is_none_or(|(s, _)| sim > s) {
                    best = Some((sim, d.old_no.expect("deleted line has old number")));
                }
            }
            return match best {
                Some((sim, old)) if sim >= threshold => Some((old_path, old)),
                _ => None,
            };
        }
        offset += i64::from(h.old_len) - i64::from(h.new_len);
    }
    let mapped = i64::from(line_no) + offset;
    u32::try_from(mapped).ok().filter(|n| *n >= 1).map(|n| (old_path, n))
}
