//! Rank-based AUC with average-rank tie handling, and Logloss.

use crate::error::{CtrError, Result};

/// Scores paired with binary labels.
#[derive(Debug, Clone)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<f64>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<f64>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(CtrError::Metric(format!(
                "scores/labels length mismatch ({} vs {})",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(CtrError::Metric(format!("label {bad} is not 0 or 1")));
        }
        Ok(ScoredSet { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }
}

/// Area under the ROC curve via the rank-sum form: sort ascending by score,
/// give tied scores the average of their ranks, then
/// `(sum of positive ranks - M(M+1)/2) / (M*N)`.
pub fn auc(set: &ScoredSet) -> Result<f64> {
    let n_total = set.len();
    let positives = set.labels.iter().filter(|&&y| y == 1.0).count();
    let negatives = n_total - positives;
    if positives == 0 || negatives == 0 {
        return Err(CtrError::Metric(format!(
            "AUC needs both classes (got {positives} positive, {negatives} negative)"
        )));
    }

    let mut order: Vec<usize> = (0..n_total).collect();
    order.sort_by(|&a, &b| set.scores[a].total_cmp(&set.scores[b]));

    // Average ranks over runs of equal scores (1-based ranks).
    let mut rank = vec![0.0f64; n_total];
    let mut i = 0;
    while i < n_total {
        let mut j = i + 1;
        while j < n_total && set.scores[order[j]] == set.scores[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            rank[idx] = avg;
        }
        i = j;
    }

    let rank_sum: f64 = (0..n_total)
        .filter(|&i| set.labels[i] == 1.0)
        .map(|i| rank[i])
        .sum();
    let m = positives as f64;
    let n = negatives as f64;
    Ok((rank_sum - m * (m + 1.0) / 2.0) / (m * n))
}

/// Literal pairwise concordance count:
/// `(concordant + 0.5 * tied) / (M*N)`. Oracle for [`auc`].
pub fn auc_oracle(set: &ScoredSet) -> Result<f64> {
    let pos: Vec<f64> = (0..set.len())
        .filter(|&i| set.labels[i] == 1.0)
        .map(|i| set.scores[i])
        .collect();
    let neg: Vec<f64> = (0..set.len())
        .filter(|&i| set.labels[i] == 0.0)
        .map(|i| set.scores[i])
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(CtrError::Metric(
            "AUC oracle needs both classes".to_string(),
        ));
    }
    let mut acc = 0.0f64;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                acc += 1.0;
            } else if p == n {
                acc += 0.5;
            }
        }
    }
    Ok(acc / (pos.len() as f64 * neg.len() as f64))
}

/// Probabilities are clamped into this interval before the logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy, natural log:
/// `-(1/N) * sum(y*ln(p) + (1-y)*ln(1-p))`.
pub fn logloss(set: &ScoredSet) -> Result<f64> {
    if set.is_empty() {
        return Err(CtrError::Metric("logloss over an empty set".to_string()));
    }
    let mut acc = 0.0f64;
    for (&p, &y) in set.scores.iter().zip(&set.labels) {
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        acc += y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(-acc / set.len() as f64)
}
