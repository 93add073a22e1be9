//! Removal of commit-hash references from commit messages before they are
//! shown to a model, so the answer cannot be read off a `Fixes:` trailer.

use std::sync::LazyLock;

use regex::Regex;

static HEX_TOKEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b[0-9a-f]{7,40}\b").expect("valid regex"));

static REFERENCE_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?ix)^\s*(?:
            (?:fixes|fix|fixed|closes|close|closed|refs?|references|see(?:-also)?|reverts?|introduced[-\ ]by|cc-fixes|upstream(?:[-\ ]commit)?|backport(?:ed)?[-\ ]of|cherry[-\ ]picked[-\ ]from)\s*[:=]
          | \(?\s*cherry[-\ ]picked\ from\ commit\b
          | this\ reverts\ commit\b
          | (?:commit|upstream)\s+[0-9a-f]{7,40}\b
        )",
    )
    .expect("valid regex")
});

static TRAILER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[A-Za-z][A-Za-z0-9-]*:\s").expect("valid regex"));

/// True when `line` holds a 7 to 40 character hex token.
pub fn has_hex_token(line: &str) -> bool {
    HEX_TOKEN.is_match(line)
}

fn is_reference(line: &str, in_trailer_block: bool) -> bool {
    if !has_hex_token(line) {
        return false;
    }
    if REFERENCE_LINE.is_match(line) {
        return true;
    }
    // a line that is nothing but hex ids (and punctuation)
    let residue = HEX_TOKEN.replace_all(line, "");
    if residue.chars().all(|c| !c.is_alphanumeric()) {
        return true;
    }
    in_trailer_block && TRAILER.is_match(line)
}

/// Index of the first line of the trailer block, or `lines.len()` when the
/// message has none. The block is the last paragraph (never the subject) when
/// every line in it is a `Key: value` trailer, a reference, or a continuation.
fn trailer_start(lines: &[&str]) -> usize {
    let Some(last) = lines.iter().rposition(|l| !l.trim().is_empty()) else {
        return lines.len();
    };
    let Some(blank) = lines[..last].iter().rposition(|l| l.trim().is_empty()) else {
        return lines.len();
    };
    let para = &lines[blank + 1..=last];
    let all_trailers = para.iter().all(|l| {
        TRAILER.is_match(l) || REFERENCE_LINE.is_match(l) || l.starts_with(char::is_whitespace)
    });
    if all_trailers {
        blank + 1
    } else {
        lines.len()
    }
}

fn sanitize_once(text: &str) -> Option<String> {
    let lines: Vec<&str> = text.split('\n').collect();
    let trailers = trailer_start(&lines);
    let kept: Vec<&str> = lines
        .iter()
        .enumerate()
        .filter(|(i, l)| !is_reference(l, *i >= trailers))
        .map(|(_, l)| *l)
        .collect();
    if kept.len() == lines.len() {
        return None;
    }
    let end = kept
        .iter()
        .rposition(|l| !l.trim().is_empty())
        .map_or(0, |i| i + 1);
    Some(kept[..end].join("\n"))
}

/// Drops lines that reference commits by hash: `Fixes:`-style trailers,
/// cherry-pick and revert notes, and hex ids inside the trailer block.
/// Other lines are kept byte for byte; blank lines left dangling at the end by
/// a removal are dropped too. Idempotent.
pub fn sanitize_commit_message(text: &str) -> String {
    let mut current = text.to_string();
    // removing a trailing paragraph can expose an earlier trailer block
    while let Some(next) = sanitize_once(&current) {
        current = next;
    }
    current
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn removes_fixes_trailer() {
        assert_eq!(sanitize_commit_message("Fix overflow\n\nFixes: a1b2c3d4e5f6"), "Fix overflow");
        assert_eq!(
            sanitize_commit_message("Fix overflow\n\nFixes: a1b2c3d4e5f6 (\"net: add thing\")\nSigned-off-by: A <a@b.c>\n"),
            "Fix overflow\n\nSigned-off-by: A <a@b.c>"
        );
    }

    #[test]
    fn leaves_plain_messages_alone() {
        for msg in ["Fix overflow\n", "Add feature\n\nLonger body text.", "", "\n\n"] {
            assert_eq!(sanitize_commit_message(msg), msg);
        }
    }

    #[test]
    fn removes_cherry_pick_and_revert_notes() {
        let msg = "Backport fix\n\n(cherry picked from commit deadbeefcafe1234deadbeefcafe1234deadbeef)";
        assert_eq!(sanitize_commit_message(msg), "Backport fix");
        let msg = "Revert \"x\"\n\nThis reverts commit 0123456789abcdef0123456789abcdef01234567.\n";
        assert_eq!(sanitize_commit_message(msg), "Revert \"x\"");
    }

    #[test]
    fn hex_in_prose_outside_trailers_is_kept() {
        let msg = "Handle value 0xdeadbeefcafe in parser\n\nThe value deadbeefcafe was rejected.\n";
        assert_eq!(sanitize_commit_message(msg), msg);
    }

    #[test]
    fn exposed_trailer_block_is_cleaned_too() {
        let msg = "Subject\n\nAcked-by: deadbee1\n\nFixes: 1234567";
        let once = sanitize_commit_message(msg);
        assert_eq!(once, "Subject");
        assert_eq!(sanitize_commit_message(&once), once);
    }

    #[test]
    fn idempotent_on_examples() {
        let msg = "Subject\n\nBody\n\nFixes: 1234567\nCloses: #12\n";
        let once = sanitize_commit_message(msg);
        assert_eq!(sanitize_commit_message(&once), once);
        assert_eq!(once, "Subject\n\nBody\n\nCloses: #12");
    }
}
