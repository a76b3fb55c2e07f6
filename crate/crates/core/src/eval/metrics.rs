use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::types::SUBSET_SIZE;

fn check(gt: &BTreeSet<String>, k: usize) -> Result<()> {
    if gt.is_empty() {
        return Err(Error::EmptyGt);
    }
    if k == 0 {
        return Err(Error::range("k", "must be at least 1"));
    }
    Ok(())
}

/// 1.0 if any ground-truth id is among the first `k`, else 0.0.
pub fn recall_at_k(ranking: &[String], gt: &BTreeSet<String>, k: usize) -> Result<f64> {
    check(gt, k)?;
    Ok(if ranking.iter().take(k).any(|id| gt.contains(id)) { 1.0 } else { 0.0 })
}

/// Recall@k restricted to the six subset members, taken in `ranking` order.
pub fn recall_subset_at_k(ranking: &[String], subset: &[String], gt: &BTreeSet<String>, k: usize) -> Result<f64> {
    check(gt, k)?;
    if subset.len() != SUBSET_SIZE {
        return Err(Error::BadSubset(format!("expected {SUBSET_SIZE} members, got {}", subset.len())));
    }
    if !subset.iter().any(|id| gt.contains(id)) {
        return Err(Error::BadSubset("subset contains no ground-truth id".into()));
    }
    let within: Vec<String> = ranking.iter().filter(|id| subset.contains(id)).cloned().collect();
    recall_at_k(&within, gt, k)
}

/// Average precision at `k`, normalized by `min(|gt|, k)`.
pub fn map_at_k(ranking: &[String], gt: &BTreeSet<String>, k: usize) -> Result<f64> {
    check(gt, k)?;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, id) in ranking.iter().take(k).enumerate() {
        if gt.contains(id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / gt.len().min(k) as f64)
}
