//! Full-ranking top-k evaluation.
//!
//! Every item the user has not interacted with in training is a candidate
//! (validation positives are also excluded when scoring the test partition).
//! Ties in score are broken by ascending item index.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Partition, Split, SplitMode};
use crate::error::{LatticeError, Result};
use crate::model::{forward, ForwardOutput, ModelContext, ParameterSet};

fn rank_order(scores: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// All non-excluded items, best first. `excluded` must be sorted.
pub fn rank_items(scores: &[f64], excluded: &[usize]) -> Vec<usize> {
    let mut items: Vec<usize> = (0..scores.len())
        .filter(|i| excluded.binary_search(i).is_err())
        .collect();
    items.sort_unstable_by(rank_order(scores));
    items
}

/// The first `k` entries of [`rank_items`], found by partial selection.
pub fn top_k_items(scores: &[f64], excluded: &[usize], k: usize) -> Vec<usize> {
    let mut items: Vec<usize> = (0..scores.len())
        .filter(|i| excluded.binary_search(i).is_err())
        .collect();
    let order = rank_order(scores);
    if k == 0 {
        return Vec::new();
    }
    if items.len() > k {
        items.select_nth_unstable_by(k - 1, &order);
        items.truncate(k);
    }
    items.sort_unstable_by(order);
    items
}

fn hits<'a>(ranked: &'a [usize], relevant: &[usize], k: usize) -> impl Iterator<Item = usize> + 'a {
    let relevant: std::collections::HashSet<usize> = relevant.iter().copied().collect();
    ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(move |(_, i)| relevant.contains(i))
        .map(|(p, _)| p)
}

/// `|top-k ∩ relevant| / |relevant|`
pub fn recall_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    hits(ranked, relevant, k).count() as f64 / relevant.len() as f64
}

/// `|top-k ∩ relevant| / k`
pub fn precision_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    hits(ranked, relevant, k).count() as f64 / k as f64
}

/// Binary-relevance NDCG with `1 / log2(position + 1)` gains.
pub fn ndcg_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    let ideal: f64 = (1..=relevant.len().min(k))
        .map(|p| 1.0 / ((p + 1) as f64).log2())
        .sum();
    if ideal == 0.0 {
        return 0.0;
    }
    let dcg: f64 = hits(ranked, relevant, k)
        .map(|p| 1.0 / ((p + 2) as f64).log2())
        .sum();
    dcg / ideal
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffMetrics {
    pub k: usize,
    pub recall: f64,
    pub precision: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: SplitMode,
    pub partition: Partition,
    pub cutoffs: Vec<usize>,
    pub metrics: Vec<CutoffMetrics>,
    pub num_evaluated_users: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
}

impl EvalReport {
    pub fn at(&self, k: usize) -> Option<&CutoffMetrics> {
        self.metrics.iter().find(|m| m.k == k)
    }
}

/// Items hidden from the candidate set of `user` when ranking `partition`.
pub fn excluded_items(split: &Split, partition: Partition, user: usize) -> Vec<usize> {
    let mut ex = split.train.positives(user).to_vec();
    if partition == Partition::Test {
        ex.extend_from_slice(split.valid.positives(user));
        ex.sort_unstable();
        ex.dedup();
    }
    ex
}

/// Per-user metrics `[recall, precision, ndcg]` for each cutoff, for every user
/// with at least one positive in the partition.
pub fn per_user_metrics(
    out: &ForwardOutput,
    split: &Split,
    partition: Partition,
    cutoffs: &[usize],
) -> Vec<(usize, Vec<[f64; 3]>)> {
    let target = split.partition(partition);
    let max_k = cutoffs.iter().copied().max().unwrap_or(0);
    (0..target.num_users())
        .into_par_iter()
        .filter(|&u| !target.positives(u).is_empty())
        .map(|u| {
            let scores = out.score_all(u);
            let scores = scores.as_slice().expect("contiguous");
            let ranked = top_k_items(scores, &excluded_items(split, partition, u), max_k);
            let relevant = target.positives(u);
            let m = cutoffs
                .iter()
                .map(|&k| {
                    [
                        recall_at_k(&ranked, relevant, k),
                        precision_at_k(&ranked, relevant, k),
                        ndcg_at_k(&ranked, relevant, k),
                    ]
                })
                .collect();
            (u, m)
        })
        .collect()
}

/// Averages the per-user metrics of a precomputed forward pass.
pub fn evaluate_output(
    out: &ForwardOutput,
    split: &Split,
    partition: Partition,
    cutoffs: &[usize],
) -> Result<EvalReport> {
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(LatticeError::InvalidArgument(
            "cutoffs must be a non-empty list of positive integers".into(),
        ));
    }
    let per_user = per_user_metrics(out, split, partition, cutoffs);
    if per_user.is_empty() {
        return Err(LatticeError::NoEvaluableUsers(partition.to_string()));
    }
    let n = per_user.len() as f64;
    let metrics = cutoffs
        .iter()
        .enumerate()
        .map(|(c, &k)| {
            let mut sums = [0.0; 3];
            // users are in ascending order, so the sums are reproducible
            for (_, m) in &per_user {
                for s in 0..3 {
                    sums[s] += m[c][s];
                }
            }
            CutoffMetrics {
                k,
                recall: sums[0] / n,
                precision: sums[1] / n,
                ndcg: sums[2] / n,
            }
        })
        .collect();
    Ok(EvalReport {
        mode: split.mode,
        partition,
        cutoffs: cutoffs.to_vec(),
        metrics,
        num_evaluated_users: per_user.len(),
        config_digest: None,
    })
}

pub fn evaluate(
    ctx: &ModelContext,
    params: &ParameterSet,
    split: &Split,
    partition: Partition,
    cutoffs: &[usize],
) -> Result<EvalReport> {
    let out = forward(ctx, params)?;
    evaluate_output(&out, split, partition, cutoffs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranking_examples() {
        assert_eq!(rank_items(&[0.1, 0.9, 0.5], &[]), vec![1, 2, 0]);
        assert_eq!(rank_items(&[0.3, 0.3, 0.3], &[]), vec![0, 1, 2]);
        assert_eq!(rank_items(&[0.1, 0.9, 0.5], &[1]), vec![2, 0]);
        assert_eq!(top_k_items(&[0.1, 0.9, 0.5, 0.5], &[], 2), vec![1, 2]);
        assert_eq!(top_k_items(&[0.1, 0.9], &[0], 5), vec![1]);
    }

    #[test]
    fn recall_examples() {
        let ranked: Vec<usize> = (0..30).collect();
        assert_eq!(recall_at_k(&ranked, &[3, 25], 20), 0.5);
        assert_eq!(recall_at_k(&ranked, &[0, 1], 20), 1.0);
    }

    #[test]
    fn precision_examples() {
        let ranked: Vec<usize> = (0..30).collect();
        assert_eq!(precision_at_k(&ranked, &[3, 25], 20), 0.05);
        assert_eq!(precision_at_k(&ranked, &[29], 20), 0.0);
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&[7, 1, 2], &[7], 20), 1.0);
        let v = ndcg_at_k(&[10, 11, 12], &[10, 12], 20);
        let expected = (1.0 + 0.5) / (1.0 + 1.0 / 3f64.log2());
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.91972).abs() < 1e-5);
        assert_eq!(ndcg_at_k(&[1, 2], &[5], 20), 0.0);
    }
}
