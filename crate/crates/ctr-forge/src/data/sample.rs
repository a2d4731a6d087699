//! Stratified subsampling and the stratified train/test split.

use super::Record;
use crate::error::{CtrError, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn class_indices(records: &[Record]) -> (Vec<usize>, Vec<usize>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if r.label == 1 {
            pos.push(i);
        } else {
            neg.push(i);
        }
    }
    (pos, neg)
}

/// Seed-deterministic subsample of `n` records whose positive:negative ratio
/// matches the population's (positive count rounded to nearest).
pub fn stratified_sample(records: &[Record], n: usize, seed: u64) -> Result<Vec<Record>> {
    if n > records.len() {
        return Err(CtrError::Arg(format!(
            "sample size {n} exceeds population {}",
            records.len()
        )));
    }
    let (mut pos, mut neg) = class_indices(records);
    let rate = pos.len() as f64 / records.len() as f64;
    let mut n_pos = (n as f64 * rate).round() as usize;
    n_pos = n_pos.min(pos.len()).min(n);
    let n_neg = (n - n_pos).min(neg.len());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let mut picked: Vec<usize> = pos[..n_pos].to_vec();
    picked.extend_from_slice(&neg[..n_neg]);
    picked.sort_unstable(); // keep input order in the output
    Ok(picked.into_iter().map(|i| records[i].clone()).collect())
}

/// Stratified split into (train, test): per class, a seeded shuffle and an
/// 80/20-style cut. Partitions are disjoint and their union is the input.
pub fn split(records: &[Record], ratio: f64, seed: u64) -> (Vec<Record>, Vec<Record>) {
    assert!((0.0..=1.0).contains(&ratio), "split ratio must be in [0,1]");
    let (mut pos, mut neg) = class_indices(records);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    // Round per class, then correct the total so that the overall train
    // count is exactly round(ratio * len).
    let want_total = (ratio * records.len() as f64).round() as usize;
    let mut n_pos_train = (ratio * pos.len() as f64).round() as usize;
    let n_neg_train = (ratio * neg.len() as f64).round() as usize;
    let drift = (n_pos_train + n_neg_train) as i64 - want_total as i64;
    n_pos_train = (n_pos_train as i64 - drift).clamp(0, pos.len() as i64) as usize;

    let mut train_idx: Vec<usize> = pos[..n_pos_train].to_vec();
    train_idx.extend_from_slice(&neg[..n_neg_train]);
    let mut test_idx: Vec<usize> = pos[n_pos_train..].to_vec();
    test_idx.extend_from_slice(&neg[n_neg_train..]);
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    (
        train_idx.into_iter().map(|i| records[i].clone()).collect(),
        test_idx.into_iter().map(|i| records[i].clone()).collect(),
    )
}
