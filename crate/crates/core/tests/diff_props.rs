mod support;

use proptest::prelude::*;
use tempfile::TempDir;

use szz_core::diff::{
    line_similarity, map_line_backward, map_through_file_diff, parse_unified_diff, render_unified_diff, FileDiff,
    LineKind,
};
use szz_core::repo::RepoHandle;
use szz_core::synth::{CommitSpec, History};

use support::{random_linear_case, similarity_oracle, Mirror};

fn check_hunk_sums(files: &[FileDiff]) {
    for h in files.iter().flat_map(|f| &f.hunks) {
        let count = |k: LineKind| h.lines.iter().filter(|l| l.kind == k).count() as u32;
        let ctx = count(LineKind::Context);
        assert_eq!(count(LineKind::Deleted) + ctx, h.old_len, "{}", h.header());
        assert_eq!(count(LineKind::Added) + ctx, h.new_len, "{}", h.header());
    }
}

fn check_round_trip(text: &str) {
    let parsed = parse_unified_diff(text).unwrap();
    check_hunk_sums(&parsed);
    let rendered = render_unified_diff(&parsed);
    let reparsed = parse_unified_diff(&rendered).unwrap();
    assert_eq!(reparsed, parsed);
    assert_eq!(render_unified_diff(&reparsed), rendered);
}

#[test]
fn round_trip_on_generated_histories() {
    for seed in 0..15 {
        let case = random_linear_case(seed);
        let dir = TempDir::new().unwrap();
        let ids = case.history.build(dir.path()).unwrap();
        let repo = RepoHandle::open(dir.path(), None).unwrap();
        for id in &ids {
            let meta = repo.commit_meta(id).unwrap();
            for ctx in [0, 1, 3, 5] {
                check_round_trip(&repo.diff_against_parent(&meta, ctx).unwrap());
            }
        }
    }
}

#[test]
fn round_trip_on_mirror_commits() {
    let m = Mirror::build();
    let repo = m.repo();
    for id in m.ids.values() {
        let (_, text) = repo.show_commit(id).unwrap();
        check_round_trip(&text);
    }
}

#[test]
fn round_trip_with_renames_binary_and_missing_newline() {
    let mut h = History::new();
    h.push_linear(
        CommitSpec::new("A")
            .write("a.txt", "one\ntwo\nthree\nfour\nfive\nsix\n")
            .write("tail.txt", "x\ny")
            .write("img.bin", "\0\u{1}\u{2}binary"),
    );
    h.push_linear(
        CommitSpec::new("B")
            .rename("a.txt", "b.txt")
            .write("tail.txt", "x\nz")
            .write("img.bin", "\0\u{3}binary")
            .write("new.txt", "fresh\n"),
    );
    h.push_linear(CommitSpec::new("C").delete("new.txt").write("b.txt", "one\ntwo\nTHREE\nfour\nfive\nsix\n"));
    let dir = TempDir::new().unwrap();
    let ids = h.build(dir.path()).unwrap();
    let repo = RepoHandle::open(dir.path(), None).unwrap();
    for id in &ids {
        let (_, text) = repo.show_commit(id).unwrap();
        check_round_trip(&text);
    }
}

fn edited_pair(old: Vec<String>, edits: Vec<(usize, u8)>) -> (String, String) {
    let mut new = old.clone();
    for (pos, op) in edits {
        if new.is_empty() {
            new.push(format!("ins{pos}"));
            continue;
        }
        let at = pos % new.len();
        match op % 3 {
            0 => new[at] = format!("{} changed", new[at]),
            1 => {
                new.remove(at);
            }
            _ => new.insert(at, format!("added {pos}")),
        }
    }
    let join = |v: &[String]| v.iter().map(|l| format!("{l}\n")).collect::<String>();
    (join(&old), join(&new))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn parse_render_fixpoint_on_random_edits(
        old in prop::collection::vec("[a-z ]{0,12}", 1..25),
        edits in prop::collection::vec((0usize..50, any::<u8>()), 1..6),
        ctx in 0u32..4,
    ) {
        let (a, b) = edited_pair(old, edits);
        let mut h = History::new();
        h.push_linear(CommitSpec::new("old").write("f.txt", a));
        h.push_linear(CommitSpec::new("new").write("f.txt", b));
        let dir = TempDir::new().unwrap();
        let ids = h.build(dir.path()).unwrap();
        let repo = RepoHandle::open(dir.path(), None).unwrap();
        let meta = repo.commit_meta(&ids[1]).unwrap();
        check_round_trip(&repo.diff_against_parent(&meta, ctx).unwrap());
    }

    #[test]
    fn similarity_matches_dp_oracle(a in "[ a-zA-Z0-9;(){}]{0,30}", b in "[ a-zA-Z0-9;(){}]{0,30}") {
        let s = line_similarity(&a, &b);
        prop_assert!((s - similarity_oracle(&a, &b)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!((s - line_similarity(&b, &a)).abs() < 1e-12);
        prop_assert_eq!(line_similarity(&a, &format!("  {a}\t")), 1.0);
    }

    #[test]
    fn threshold_zero_always_maps_modified_lines(
        old in prop::collection::vec("[a-z]{1,10}", 2..15),
        edits in prop::collection::vec((0usize..50, any::<u8>()), 1..6),
    ) {
        let (a, b) = edited_pair(old, edits);
        let mut h = History::new();
        h.push_linear(CommitSpec::new("old").write("f.txt", a));
        h.push_linear(CommitSpec::new("new").write("f.txt", b));
        let dir = TempDir::new().unwrap();
        let ids = h.build(dir.path()).unwrap();
        let repo = RepoHandle::open(dir.path(), None).unwrap();
        let meta = repo.commit_meta(&ids[1]).unwrap();
        let files = parse_unified_diff(&repo.diff_against_parent(&meta, 0).unwrap()).unwrap();
        for fd in &files {
            for h in &fd.hunks {
                let deleted: Vec<u32> = h.deleted().filter_map(|l| l.old_no).collect();
                for added in h.added() {
                    let n = added.new_no.unwrap();
                    let mapped = map_through_file_diff(fd, n, 0.0);
                    if deleted.is_empty() {
                        prop_assert_eq!(mapped, None);
                    } else {
                        let (_, old_no) = mapped.unwrap();
                        prop_assert!(deleted.contains(&old_no));
                        let via_repo = map_line_backward(&repo, &ids[1], "f.txt", n, 0.0).unwrap();
                        prop_assert_eq!(via_repo.map(|m| m.1), Some(old_no));
                    }
                }
            }
        }
    }
}
