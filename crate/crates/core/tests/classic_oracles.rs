mod support;

use std::collections::BTreeSet;

use proptest::prelude::*;
use tempfile::TempDir;

use szz_core::classic::{self, Algorithm, SzzError};
use szz_core::diff::parse_unified_diff;
use szz_core::repo::RepoHandle;
use szz_core::synth::{CommitSpec, History};

use support::{file_name, random_linear_case, vszz_chain, Mirror, RandomCase};

fn build(history: &History) -> (TempDir, RepoHandle, Vec<String>) {
    let dir = TempDir::new().unwrap();
    let ids = history.build(dir.path()).unwrap();
    let repo = RepoHandle::open(dir.path(), None).unwrap();
    (dir, repo, ids)
}

fn ids_of(ids: &[String], owners: &BTreeSet<usize>) -> BTreeSet<String> {
    owners.iter().map(|&i| ids[i].clone()).collect()
}

fn check_blame_everywhere(case: &RandomCase, repo: &RepoHandle, ids: &[String]) {
    for (c, snapshot) in case.snapshots.iter().enumerate() {
        for (f, lines) in snapshot.iter().enumerate() {
            for (i, (text, owner)) in lines.iter().enumerate() {
                let b = repo.blame_line(&ids[c], &file_name(f), i as u32 + 1).unwrap();
                assert_eq!(&b.line_text, text);
                assert_eq!(b.commit_id, ids[*owner], "commit {c} file {f} line {}", i + 1);
                assert!(repo.is_ancestor(&b.commit_id, &ids[c]).unwrap());
            }
        }
    }
}

#[test]
fn blame_matches_replay_oracle_on_every_line() {
    for seed in 0..25 {
        let case = random_linear_case(seed);
        let (_dir, repo, ids) = build(&case.history);
        check_blame_everywhere(&case, &repo, &ids);
    }
}

#[test]
fn bszz_matches_last_modifier_oracle_on_100_repos() {
    for seed in 1000..1100 {
        let case = random_linear_case(seed);
        let (_dir, repo, ids) = build(&case.history);
        let fix = ids.last().unwrap();
        let got = classic::run_bszz(&repo, fix).unwrap();
        assert_eq!(got.candidates, ids_of(&ids, &case.expected_owners), "seed {seed}");
    }
}

#[test]
fn classic_invariants_on_random_repos() {
    for seed in 2000..2030 {
        let case = random_linear_case(seed);
        let (_dir, repo, ids) = build(&case.history);
        let fix = ids.last().unwrap();
        let b = classic::run_bszz(&repo, fix).unwrap();
        // histories here carry no cosmetic lines and no merges
        assert_eq!(classic::run_agszz(&repo, fix).unwrap().candidates, b.candidates);
        assert_eq!(classic::run_maszz(&repo, fix).unwrap().candidates, b.candidates);
        // mapping disabled
        assert_eq!(classic::run_vszz(&repo, fix, 1.0 + 1e-9).unwrap().candidates, b.candidates);
        for algo in Algorithm::CLASSIC {
            let set = match classic::run(&repo, algo, fix, 0.75) {
                Err(SzzError::EmptyCandidates { .. }) if b.candidates.is_empty() => continue,
                other => other.unwrap(),
            };
            for c in &set.candidates {
                assert!(repo.is_ancestor(c, fix).unwrap(), "{algo} {c}");
            }
            if matches!(algo, Algorithm::Lszz | Algorithm::Rszz) && !b.candidates.is_empty() {
                assert_eq!(set.candidates.len(), 1);
                assert!(b.candidates.is_superset(&set.candidates));
            }
        }
    }
}

#[test]
fn show_commit_line_counts_agree_with_hunk_headers() {
    for seed in 3000..3020 {
        let case = random_linear_case(seed);
        let (_dir, repo, ids) = build(&case.history);
        for id in &ids {
            let (_, text) = repo.show_commit(id).unwrap();
            let plus = text.lines().filter(|l| l.starts_with('+') && !l.starts_with("+++")).count();
            let minus = text.lines().filter(|l| l.starts_with('-') && !l.starts_with("---")).count();
            let files = parse_unified_diff(&text).unwrap();
            let hunks = files.iter().flat_map(|f| &f.hunks);
            let (added, deleted): (usize, usize) = hunks.fold((0, 0), |(a, d), h| (a + h.added().count(), d + h.deleted().count()));
            assert_eq!((added, deleted), (plus, minus));
        }
    }
}

#[test]
fn vszz_follows_similar_rewrites_to_the_first_commit() {
    for seed in 0..20 {
        let chain = vszz_chain(seed, None);
        assert!(chain.step_similarities.iter().all(|s| *s >= 0.75));
        let (_dir, repo, ids) = build(&chain.history);
        let got = classic::run_vszz(&repo, &ids[chain.fix], 0.75).unwrap();
        assert_eq!(got.candidates, BTreeSet::from([ids[0].clone()]), "seed {seed}");
        assert_eq!(chain.expected_origin, 0);
    }
}

#[test]
fn vszz_stops_at_a_dissimilar_rewrite() {
    for seed in 0..20 {
        let chain = vszz_chain(seed, Some(2 + seed as usize % 3));
        assert!(chain.step_similarities.iter().any(|s| *s < 0.75));
        let (_dir, repo, ids) = build(&chain.history);
        let got = classic::run_vszz(&repo, &ids[chain.fix], 0.75).unwrap();
        assert_eq!(got.candidates, BTreeSet::from([ids[chain.expected_origin].clone()]), "seed {seed}");
        // B-SZZ only sees the last rewrite
        let b = classic::run_bszz(&repo, &ids[chain.fix]).unwrap();
        assert_eq!(b.candidates.len(), 1);
        assert_eq!(b.candidates.iter().next().unwrap(), &repo.blame_line(&ids[chain.fix - 1], "src/Target.java", 3).unwrap().commit_id);
    }
}

#[test]
fn two_commit_fixture_blames_the_first() {
    let mut h = History::new();
    h.push_linear(CommitSpec::new("A").write("a.c", "int x = 1;\nint y = 2;\n"));
    h.push_linear(CommitSpec::new("fix").write("a.c", "int x = 1;\nint y = 3;\n"));
    let (_dir, repo, ids) = build(&h);
    let set = classic::run_bszz(&repo, &ids[1]).unwrap();
    assert_eq!(set.candidates, BTreeSet::from([ids[0].clone()]));
}

#[test]
fn agszz_skips_cosmetic_lines_and_commits() {
    let mut h = History::new();
    h.push_linear(CommitSpec::new("A").write("a.c", "int f(int v) {\n  return v+1;\n}\n"));
    // whitespace-only reformat of the same statement
    h.push_linear(CommitSpec::new("reformat").write("a.c", "int f(int v) {\n    return v + 1;\n}\n"));
    h.push_linear(CommitSpec::new("comment").write("a.c", "int f(int v) {\n    return v + 1;\n    // note\n}\n"));
    h.push_linear(CommitSpec::new("fix").write("a.c", "int f(int v) {\n    return v + 2;\n}\n"));
    let (_dir, repo, ids) = build(&h);
    let b = classic::run_bszz(&repo, &ids[3]).unwrap();
    assert_eq!(b.candidates, BTreeSet::from([ids[1].clone(), ids[2].clone()]));
    let ag = classic::run_agszz(&repo, &ids[3]).unwrap();
    assert_eq!(ag.candidates, BTreeSet::from([ids[0].clone()]));
}

#[test]
fn maszz_skips_merge_commits() {
    let mut h = History::new();
    let a = h.push(CommitSpec::new("A").write("a.c", "int x = 1;\n"));
    let side = h.push(CommitSpec::new("side").parent(a).write("b.c", "int z;\n"));
    let main = h.push(CommitSpec::new("main").parent(a).write("a.c", "int x = 1;\nint y = 2;\n"));
    let merge = h.push(
        CommitSpec::new("merge")
            .parent(main)
            .parent(side)
            .write("a.c", "int x = 1;\nint y = 5;\n")
            .write("b.c", "int z;\n"),
    );
    let fix = h.push(CommitSpec::new("fix").parent(merge).write("a.c", "int x = 1;\nint y = 0;\n"));
    let (_dir, repo, ids) = build(&h);
    let b = classic::run_bszz(&repo, &ids[fix]).unwrap();
    assert_eq!(b.candidates, BTreeSet::from([ids[merge].clone()]));
    let ma = classic::run_maszz(&repo, &ids[fix]).unwrap();
    assert!(!ma.candidates.contains(&ids[merge]));
    assert_eq!(ma.candidates, BTreeSet::from([ids[main].clone()]));
}

#[test]
fn lszz_and_rszz_pick_by_lines_and_recency() {
    let mut h = History::new();
    h.push_linear(CommitSpec::new("A").write("a.c", "a1;\na2;\na3;\n"));
    h.push_linear(CommitSpec::new("B").write("a.c", "a1;\na2;\na3;\nb1;\n"));
    h.push_linear(CommitSpec::new("fix").write("a.c", "x;\n"));
    let (_dir, repo, ids) = build(&h);
    let l = classic::run_lszz(&repo, &ids[2]).unwrap();
    assert_eq!(l.candidates, BTreeSet::from([ids[0].clone()]));
    let r = classic::run_rszz(&repo, &ids[2]).unwrap();
    assert_eq!(r.candidates, BTreeSet::from([ids[1].clone()]));
}

#[test]
fn lszz_without_candidates_is_an_error() {
    let mut h = History::new();
    h.push_linear(CommitSpec::new("A").write("a.c", "a;\n"));
    h.push_linear(CommitSpec::new("fix").write("a.c", "a;\nb;\n"));
    let (_dir, repo, ids) = build(&h);
    assert!(matches!(classic::run_lszz(&repo, &ids[1]), Err(SzzError::EmptyCandidates { .. })));
    assert!(classic::run_bszz(&repo, &ids[1]).unwrap().candidates.is_empty());
}

#[test]
fn root_fix_is_rejected() {
    let mut h = History::new();
    h.push_linear(CommitSpec::new("A").write("a.c", "a;\n"));
    let (_dir, repo, ids) = build(&h);
    assert!(matches!(classic::run_bszz(&repo, &ids[0]), Err(SzzError::RootCommitFix(_))));
}

#[test]
fn mirror_vszz_and_bszz() {
    let m = Mirror::build();
    let repo = m.repo();
    let fix = m.id("735579b");
    let b = classic::run_bszz(&repo, fix).unwrap();
    assert!(!b.candidates.is_empty());
    let v = classic::run_vszz(&repo, fix, 0.75).unwrap();
    for c in v.candidates.iter().chain(&b.candidates) {
        assert!(repo.is_ancestor(c, fix).unwrap());
        assert_ne!(c, fix);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn bszz_oracle_property(seed in any::<u64>()) {
        let case = random_linear_case(seed);
        let (_dir, repo, ids) = build(&case.history);
        let got = classic::run_bszz(&repo, ids.last().unwrap()).unwrap();
        prop_assert_eq!(got.candidates, ids_of(&ids, &case.expected_owners));
    }
}
