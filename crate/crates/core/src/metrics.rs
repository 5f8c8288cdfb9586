//! Offline ranking metrics and the evaluation loop.
//!
//! All metrics treat relevance as binary: an item is relevant when it
//! appears in the user's held-out tail. Aggregates are unweighted means
//! over the users that could be evaluated.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{profile_target_split, UserSequence};
use crate::error::{Error, Result};
use crate::retrieval::RetrievalIndex;

/// Fraction of the truth set recovered in the top k.
pub fn recall_at_k(topk: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = topk.iter().filter(|item| truth.contains(item)).count();
    hits as f64 / truth.len() as f64
}

/// Normalized discounted cumulative gain with binary relevance.
///
/// The ideal ranking places one relevant item per position, so the
/// normalizer sums the first `min(|truth|, k)` discount terms.
pub fn ndcg_at_k(topk: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() || topk.is_empty() {
        return 0.0;
    }
    let mut dcg = 0.0;
    for (rank, item) in topk.iter().enumerate() {
        if truth.contains(item) {
            dcg += 1.0 / ((rank + 2) as f64).log2();
        }
    }
    let ideal: f64 = (0..truth.len().min(topk.len()))
        .map(|rank| 1.0 / ((rank + 2) as f64).log2())
        .sum();
    dcg / ideal
}

/// Whether at least one relevant item made the top k.
pub fn hit_at_k(topk: &[usize], truth: &[usize]) -> f64 {
    if topk.iter().any(|item| truth.contains(item)) {
        1.0
    } else {
        0.0
    }
}

/// Mean metrics over the evaluated users at each cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub hit_rate: Vec<f64>,
    pub users_evaluated: usize,
    pub users_skipped: usize,
}

impl EvalReport {
    /// Recall at a cutoff that was part of the evaluation.
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&c| c == k).map(|i| self.recall[i])
    }
}

/// Scores held-out users against the index at each cutoff in `ks`.
///
/// A user is skipped (and counted as such) when the sequence is too short
/// to split into a profile and a non-empty tail. Each user's profile runs
/// through interest extraction once, retrieving `max(ks)` items that every
/// cutoff then truncates. Profile items are excluded from the candidates,
/// so every slot goes to an item the user has not already interacted with.
pub fn evaluate(index: &RetrievalIndex, users: &[UserSequence], ks: &[usize]) -> Result<EvalReport> {
    if ks.is_empty() {
        return Err(Error::InvalidInput("no cutoffs to evaluate".into()));
    }
    if ks.iter().any(|&k| k == 0) {
        return Err(Error::InvalidInput("cutoffs must be positive".into()));
    }
    let max_k = *ks.iter().max().expect("ks is non-empty");
    if max_k > index.len() {
        return Err(Error::InvalidInput(format!(
            "cutoff {max_k} exceeds the catalog size {}",
            index.len()
        )));
    }
    let mut recall = vec![0.0; ks.len()];
    let mut ndcg = vec![0.0; ks.len()];
    let mut hit = vec![0.0; ks.len()];
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    for user in users {
        let Ok((profile, truth)) = profile_target_split(user) else {
            skipped += 1;
            continue;
        };
        let interests = index.extract_interests(profile)?;
        let ranked = index.retrieve(&interests, max_k, profile)?;
        let top: Vec<usize> = ranked.iter().map(|s| s.dense).collect();
        for (slot, &k) in ks.iter().enumerate() {
            let head = &top[..k.min(top.len())];
            recall[slot] += recall_at_k(head, truth);
            ndcg[slot] += ndcg_at_k(head, truth);
            hit[slot] += hit_at_k(head, truth);
        }
        evaluated += 1;
    }
    if evaluated > 0 {
        let n = evaluated as f64;
        for slot in 0..ks.len() {
            recall[slot] /= n;
            ndcg[slot] /= n;
            hit[slot] /= n;
        }
    }
    Ok(EvalReport {
        ks: ks.to_vec(),
        recall,
        ndcg,
        hit_rate: hit,
        users_evaluated: evaluated,
        users_skipped: skipped,
    })
}

/// Writes the report as pretty-printed JSON.
pub fn save_report(report: &EvalReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Config(format!("unencodable report: {e}")))?;
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a report written by [`save_report`].
pub fn load_report(path: &Path) -> Result<EvalReport> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Corrupt {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}
