//! Fixtures and oracles shared by the integration tests of both crates.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use tempfile::TempDir;

use szz_core::repo::RepoHandle;
use szz_core::synth::{import_stream, CommitSpec, History};

pub const MIRROR_STREAM: &str = include_str!("../fixtures/syncope-mirror.fi");

pub const SEARCHABLE_FIELDS: &str =
    "common/lib/src/main/java/org/apache/syncope/common/lib/search/SearchableFields.java";

/// Mirror commits in mark order, labelled by the upstream hash they stand in for.
pub const MIRROR_LABELS: [&str; 7] = [
    "246ff1f", "07aa458", "filler-1", "bbee3af", "e1a9a9e", "filler-2", "735579b",
];

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Works from either crate's manifest dir.
pub fn core_fixture(rel: &str) -> PathBuf {
    let here = Path::new(env!("CARGO_MANIFEST_DIR"));
    let own = here.join("tests/fixtures").join(rel);
    if own.exists() {
        own
    } else {
        here.join("../core/tests/fixtures").join(rel)
    }
}

pub struct Mirror {
    pub dir: TempDir,
    pub ids: BTreeMap<&'static str, String>,
}

impl Mirror {
    pub fn build() -> Mirror {
        let dir = TempDir::new().expect("tempdir");
        let ids = import_stream(dir.path(), MIRROR_STREAM).expect("import mirror");
        assert_eq!(ids.len(), MIRROR_LABELS.len());
        Mirror {
            ids: MIRROR_LABELS.iter().copied().zip(ids).collect(),
            dir,
        }
    }

    pub fn id(&self, label: &str) -> &str {
        &self.ids[label]
    }

    pub fn label_of(&self, id: &str) -> Option<&'static str> {
        self.ids.iter().find(|(_, v)| v.as_str() == id).map(|(k, _)| *k)
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn repo(&self) -> RepoHandle {
        RepoHandle::open(self.dir.path(), None).expect("open mirror")
    }
}

/// Textbook O(n·m) edit distance over chars.
#[allow(clippy::needless_range_loop)]
pub fn levenshtein_dp(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut table = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in table.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        table[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = table[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            table[i][j] = sub.min(table[i - 1][j] + 1).min(table[i][j - 1] + 1);
        }
    }
    table[a.len()][b.len()]
}

pub fn similarity_oracle(a: &str, b: &str) -> f64 {
    let (a, b) = (a.trim(), b.trim());
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        1.0
    } else {
        1.0 - levenshtein_dp(a, b) as f64 / longest as f64
    }
}

/// A random linear history whose last commit is the fix, together with the
/// commits that last wrote each line the fix removes.
pub struct RandomCase {
    pub history: History,
    pub expected_owners: BTreeSet<usize>,
    pub n_files: usize,
    /// After each commit: per file, each line's text and last writer.
    pub snapshots: Vec<Vec<Vec<(String, usize)>>>,
}

pub fn file_name(f: usize) -> String {
    format!("src/f{f}.txt")
}

fn render(lines: &[(String, usize)]) -> String {
    lines.iter().map(|(t, _)| format!("{t}\n")).collect()
}

/// Line texts are unique across the whole history and edits never reorder
/// surviving lines, so the last writer of each line is unambiguous.
pub fn random_linear_case(seed: u64) -> RandomCase {
    let mut rng = StdRng::seed_from_u64(seed);
    let n_commits = rng.gen_range(3..=15);
    let n_files = rng.gen_range(1..=5);
    let mut counter = 0usize;
    let mut fresh = |commit: usize| {
        counter += 1;
        format!("value_{counter} = compute({commit}, {counter});")
    };
    let mut files: Vec<Vec<(String, usize)>> = Vec::new();
    let mut history = History::new();

    let mut spec = CommitSpec::new("commit 0");
    for f in 0..n_files {
        let n = rng.gen_range(1..=6);
        let lines: Vec<(String, usize)> = (0..n).map(|_| (fresh(0), 0)).collect();
        spec = spec.write(file_name(f), render(&lines));
        files.push(lines);
    }
    history.push_linear(spec);
    let mut snapshots = vec![files.clone()];

    let mut expected_owners = BTreeSet::new();
    for c in 1..n_commits {
        let is_fix = c == n_commits - 1;
        let mut spec = CommitSpec::new(format!("commit {c}"));
        let mut touched = BTreeSet::new();
        let n_edits = rng.gen_range(1..=4);
        let mut removed_any = false;
        let mut edit = 0;
        while edit < n_edits || (is_fix && !removed_any) {
            edit += 1;
            let f = rng.gen_range(0..n_files);
            let lines = &mut files[f];
            let op = if is_fix && !removed_any && !lines.is_empty() {
                rng.gen_range(1..3)
            } else {
                rng.gen_range(0..3)
            };
            match op {
                1 | 2 if !lines.is_empty() => {
                    let at = rng.gen_range(0..lines.len());
                    let (_, owner) = lines.remove(at);
                    // a line written and dropped within the fix never shows in its diff
                    if is_fix && owner < c {
                        expected_owners.insert(owner);
                        removed_any = true;
                    }
                    if op == 2 {
                        lines.insert(at, (fresh(c), c));
                    }
                }
                _ => {
                    let at = rng.gen_range(0..=lines.len());
                    lines.insert(at, (fresh(c), c));
                }
            }
            touched.insert(f);
            if edit > 50 {
                // every file emptied; give up on a removal
                break;
            }
        }
        for f in touched {
            spec = spec.write(file_name(f), render(&files[f]));
        }
        history.push_linear(spec);
        snapshots.push(files.clone());
    }
    RandomCase {
        history,
        expected_owners,
        n_files,
        snapshots,
    }
}

/// One line rewritten step by step across a linear history, then deleted by
/// the fix. Commits that touch only an unrelated file are interleaved.
pub struct VszzChain {
    pub history: History,
    /// Commit index (in push order) where V-SZZ has to stop.
    pub expected_origin: usize,
    pub fix: usize,
    /// Similarity of each rewrite to the previous text, by the DP oracle.
    pub step_similarities: Vec<f64>,
}

const LOWER: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
const UPPER: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ";

fn random_word(rng: &mut StdRng, alphabet: &[u8], len: usize) -> String {
    (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())] as char).collect()
}

/// `break_at`: index of a rewrite step whose new text shares nothing with
/// the old one. Steps are numbered from 1; `None` keeps every step similar.
pub fn vszz_chain(seed: u64, break_at: Option<usize>) -> VszzChain {
    let mut rng = StdRng::seed_from_u64(seed);
    let steps = rng.gen_range(3..=8);
    let break_at = break_at.map(|b| b.clamp(1, steps));
    let len = 40;
    let file = "src/Target.java";
    let before = "class Target {\n    void run() {\n";
    let after = "    }\n}\n";
    let body = |t: &str| format!("{before}        {t};\n{after}");

    let mut history = History::new();
    let mut text = random_word(&mut rng, LOWER, len);
    let mut origin = history.push_linear(CommitSpec::new("create target").write(file, body(&text)));
    let mut step_similarities = Vec::new();
    let mut noise = 0;
    for step in 1..=steps {
        if rng.gen_bool(0.5) {
            noise += 1;
            history.push_linear(CommitSpec::new(format!("noise {noise}")).write("NOTES.md", format!("note {noise}\n")));
        }
        let next = if Some(step) == break_at {
            let alphabet = if text.as_bytes()[0].is_ascii_lowercase() { UPPER } else { LOWER };
            random_word(&mut rng, alphabet, len)
        } else {
            let mut chars: Vec<char> = text.chars().collect();
            for _ in 0..rng.gen_range(1..=6) {
                let at = rng.gen_range(0..len);
                let alphabet = if chars[at].is_ascii_lowercase() { LOWER } else { UPPER };
                chars[at] = alphabet[rng.gen_range(0..alphabet.len())] as char;
            }
            chars.into_iter().collect()
        };
        if next == text {
            continue;
        }
        let sim = similarity_oracle(&text, &next);
        if Some(step) == break_at {
            assert!(sim < 0.75);
        } else {
            assert!(sim >= 0.75);
        }
        step_similarities.push(sim);
        let idx = history.push_linear(CommitSpec::new(format!("rewrite {step}")).write(file, body(&next)));
        if Some(step) == break_at {
            origin = idx;
        }
        text = next;
    }
    let fix = history.push_linear(CommitSpec::new("remove target statement").write(file, format!("{before}{after}")));
    VszzChain {
        history,
        expected_origin: origin,
        fix,
        step_similarities,
    }
}

/// Commit messages with hash-bearing trailers, plus their prose lines.
pub fn message_corpus(seed: u64, n: usize) -> Vec<(String, Vec<String>)> {
    let mut rng = StdRng::seed_from_u64(seed);
    let subjects = [
        "Fix buffer overrun in header parser",
        "Reject oversized payloads",
        "Validate redirect targets",
        "Escape user input in templates",
        "Tighten permission checks on export",
    ];
    let bodies = [
        "The parser trusted the declared length.",
        "Callers could pass a path outside the sandbox.",
        "Add a regression test for the reported input.",
        "Only admins may trigger the export now.",
        "",
    ];
    let hex = |rng: &mut StdRng| -> String {
        let len = rng.gen_range(7..=40);
        (0..len).map(|_| b"0123456789abcdef"[rng.gen_range(0..16)] as char).collect()
    };
    (0..n)
        .map(|_| {
            let mut prose = vec![subjects[rng.gen_range(0..subjects.len())].to_string(), String::new()];
            for _ in 0..rng.gen_range(1..=3) {
                prose.push(bodies[rng.gen_range(0..bodies.len())].to_string());
            }
            let mut msg = prose.join("\n");
            let mut trailers = Vec::new();
            for _ in 0..rng.gen_range(1..=3) {
                let h = hex(&mut rng);
                trailers.push(match rng.gen_range(0..5) {
                    0 => format!("Fixes: {h}"),
                    1 => format!("(cherry picked from commit {h})"),
                    2 => format!("This reverts commit {h}."),
                    3 => format!("Introduced-by: {h}"),
                    _ => format!("Refs: {h}"),
                });
            }
            if rng.gen_bool(0.5) {
                trailers.push("Signed-off-by: Dev <dev@example.org>".into());
                prose.push(String::new());
                prose.push("Signed-off-by: Dev <dev@example.org>".into());
            }
            msg.push_str("\n\n");
            msg.push_str(&trailers.join("\n"));
            if rng.gen_bool(0.5) {
                msg.push('\n');
            }
            (msg, prose)
        })
        .collect()
}
