//! Precision, recall and F1 over identified inducing commits.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    /// precision = hits / identified, recall = hits / true.
    Standard,
    /// The two denominators swapped: precision = hits / true, recall = hits / identified.
    Swapped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub hits: usize,
    pub n_true: usize,
    pub n_identified: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub convention: Convention,
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Same commit, allowing either side to be an abbreviated id of at least 4 hex digits.
pub fn same_commit(a: &str, b: &str) -> bool {
    let (a, b) = (a.trim().to_ascii_lowercase(), b.trim().to_ascii_lowercase());
    let (short, long) = if a.len() <= b.len() { (&a, &b) } else { (&b, &a) };
    short == long || (short.len() >= 4 && long.starts_with(short.as_str()))
}

/// Truth commits matched by at least one identified commit.
pub fn matched_truth<'t>(identified: &BTreeSet<String>, truth: &'t BTreeSet<String>) -> Vec<&'t str> {
    truth
        .iter()
        .filter(|t| identified.iter().any(|i| same_commit(i, t)))
        .map(String::as_str)
        .collect()
}

/// Hits for one case: `|truth ∩ identified|`, never above either set's size.
pub fn case_hits(identified: &BTreeSet<String>, truth: &BTreeSet<String>) -> usize {
    matched_truth(identified, truth).len().min(identified.len())
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Metrics from summed counts.
pub fn from_counts(hits: usize, n_true: usize, n_identified: usize, convention: Convention) -> Metrics {
    let (precision, recall) = match convention {
        Convention::Standard => (ratio(hits, n_identified), ratio(hits, n_true)),
        Convention::Swapped => (ratio(hits, n_true), ratio(hits, n_identified)),
    };
    Metrics {
        hits,
        n_true,
        n_identified,
        precision,
        recall,
        f1: f1(precision, recall),
        convention,
    }
}

/// Sums hits and set sizes over cases, then applies `convention`.
/// Each item is `(identified, truth)` for one case.
pub fn compute_metrics<'a, I>(cases: I, convention: Convention) -> Metrics
where
    I: IntoIterator<Item = (&'a BTreeSet<String>, &'a BTreeSet<String>)>,
{
    let (mut hits, mut n_true, mut n_identified) = (0, 0, 0);
    for (identified, truth) in cases {
        hits += case_hits(identified, truth);
        n_true += truth.len();
        n_identified += identified.len();
    }
    from_counts(hits, n_true, n_identified, convention)
}
