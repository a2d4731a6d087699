//! Mini-batch training loop: Adam over the mean-BCE objective with a
//! step-decay schedule, per-epoch evaluation on the held-out split,
//! best-epoch retention, and optional early stopping.

mod sweep;

pub use sweep::{auc_trend, sweep, sweep_csv, SweepParam, SweepRow};

use crate::data::{batches, FeatureVocab, Record, Schema};
use crate::error::{CtrError, Result};
use crate::metrics::{auc, logloss, ScoredSet};
use crate::model::{forward, forward_loss, ModelConfig, ModelParams};
use crate::numerics::{adam_step, steplr, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
use std::time::Instant;

/// Hyperparameters of one training run. Defaults follow the reference
/// protocol: lr 0.05, 100 epochs, batches 2048/4096, 8:2 split, Adam with
/// StepLR.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub train_batch: usize,
    pub eval_batch: usize,
    pub split_ratio: f64,
    /// StepLR: epochs per decay step.
    pub step_size: usize,
    /// StepLR decay factor.
    pub gamma: f64,
    /// Stop after this many epochs without an eval-logloss improvement;
    /// `None` trains the full epoch budget.
    pub early_stop_patience: Option<usize>,
    /// Drives data shuffling and splits (the model has its own init seed).
    pub seed: u64,
    pub min_freq: usize,
    pub bucket_cap: usize,
    /// Stratified subsample size applied before splitting, when set.
    pub sample_n: Option<usize>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.05,
            epochs: 100,
            train_batch: 2048,
            eval_batch: 4096,
            split_ratio: 0.8,
            step_size: 30,
            gamma: 0.5,
            early_stop_patience: None,
            seed: 42,
            min_freq: 10,
            bucket_cap: 1_000_000,
            sample_n: None,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Desk-scale variant: small batches, few epochs, patience-5 early
    /// stopping, permissive vocabulary.
    pub fn desk_scale() -> Self {
        TrainConfig {
            epochs: 20,
            train_batch: 256,
            eval_batch: 4096,
            early_stop_patience: Some(5),
            min_freq: 1,
            model: ModelConfig {
                cin_layers: vec![8, 8],
                dnn_layers: vec![32, 16],
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        }
    }
}

/// Per-epoch record; eval metrics come from the held-out split only.
#[derive(Debug, Clone)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_logloss: f64,
    pub eval_auc: f64,
    pub eval_logloss: f64,
    pub lr: f64,
    pub seconds: f64,
}

/// Result of [`fit`]: parameters at the best eval-logloss epoch, final-epoch
/// parameters, the vocabulary, and the per-epoch reports.
#[derive(Debug)]
pub struct FitOutcome {
    pub best: ModelParams,
    pub last: ModelParams,
    pub vocab: FeatureVocab,
    pub reports: Vec<EpochReport>,
    /// Epoch index of `best`; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
}

/// Per-epoch shuffle seed; depends only on the run seed and epoch index, so
/// ablation and full-model runs under the same seed visit batches in the
/// same order.
pub(crate) fn epoch_shuffle_seed(seed: u64, epoch: usize) -> u64 {
    // splitmix64 step
    let mut z = seed
        .wrapping_add(0x9e3779b97f4a7c15)
        .wrapping_add(epoch as u64);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Builds the vocabulary from the training partition only, initializes the
/// model, and trains. The model's field counts are taken from the schema.
pub fn fit(
    train: &[Record],
    test: &[Record],
    schema: &Schema,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochReport),
) -> Result<FitOutcome> {
    let vocab = FeatureVocab::build(train, schema.n_cat, cfg.min_freq, cfg.bucket_cap);
    let mut model_cfg = cfg.model.clone();
    model_cfg.n_cat_fields = schema.n_cat;
    model_cfg.n_dense_fields = schema.n_dense;
    let params = ModelParams::init(&model_cfg, vocab.bucket_counts())?;
    fit_with_params(params, vocab, train, test, schema, cfg, on_epoch)
}

/// Training loop over explicitly provided initial parameters.
pub fn fit_with_params(
    mut params: ModelParams,
    vocab: FeatureVocab,
    train: &[Record],
    test: &[Record],
    schema: &Schema,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochReport),
) -> Result<FitOutcome> {
    let trainable = params.trainable_ids();
    let mut reports = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = steplr(cfg.lr, epoch, cfg.step_size, cfg.gamma);
        let shuffle = epoch_shuffle_seed(cfg.seed, epoch);

        let mut loss_sum = 0.0;
        let mut example_count = 0usize;
        for (batch_index, batch) in
            batches(train, schema, &vocab, cfg.train_batch, Some(shuffle)).enumerate()
        {
            let (loss, mut trace) = forward_loss(&batch, &params)?;
            let loss_value = trace.tape.value(loss).get(0, 0);
            if !loss_value.is_finite() {
                return Err(CtrError::TrainAbort {
                    batch: batch_index,
                    detail: param_census(&params),
                });
            }
            trace.tape.backward(loss, 1.0, &mut params.set)?;
            for &id in &trainable {
                adam_step(params.set.get_mut(id), lr, ADAM_BETA1, ADAM_BETA2, ADAM_EPS)?;
            }
            params.set.zero_grads();
            loss_sum += loss_value * batch.len as f64;
            example_count += batch.len;
        }

        let (eval_auc, eval_logloss) = evaluate(test, schema, &vocab, &params, cfg.eval_batch)?;
        let report = EpochReport {
            epoch,
            train_logloss: loss_sum / example_count.max(1) as f64,
            eval_auc,
            eval_logloss,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&report);
        reports.push(report);

        let improved = best
            .as_ref()
            .map(|(_, best_ll, _)| eval_logloss < *best_ll)
            .unwrap_or(true);
        if improved {
            best = Some((epoch, eval_logloss, clone_params(&params)));
        } else if let Some(patience) = cfg.early_stop_patience {
            let best_epoch = best.as_ref().map(|(e, _, _)| *e).unwrap_or(0);
            if epoch - best_epoch >= patience {
                break;
            }
        }
    }

    let (best_epoch, best_params) = match best {
        Some((e, _, p)) => (Some(e), p),
        None => (None, clone_params(&params)),
    };
    Ok(FitOutcome {
        best: best_params,
        last: params,
        vocab,
        reports,
        best_epoch,
    })
}

fn clone_params(params: &ModelParams) -> ModelParams {
    ModelParams {
        set: params.set.clone(),
        config: params.config.clone(),
        cat_vocab_sizes: params.cat_vocab_sizes.clone(),
        ids: params.ids.clone(),
    }
}

fn param_census(params: &ModelParams) -> String {
    let mut suspects = Vec::new();
    for p in params.set.iter() {
        let max_abs = p
            .value
            .data()
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        if !p.value.is_finite() || !p.grad.is_finite() || max_abs > 1e30 {
            suspects.push(format!("{} (max |v| {max_abs:.3e})", p.name));
        }
    }
    format!(
        "{} tensors, {} scalars; suspect: [{}]",
        params.set.len(),
        params.set.numel(),
        suspects.join(", ")
    )
}

/// Scores every record (merging predictions in input order) and computes
/// AUC and Logloss over the concatenated predictions, never per batch.
pub fn evaluate(
    records: &[Record],
    schema: &Schema,
    vocab: &FeatureVocab,
    params: &ModelParams,
    eval_batch: usize,
) -> Result<(f64, f64)> {
    let scored = predict(records, schema, vocab, params, eval_batch)?;
    Ok((auc(&scored)?, logloss(&scored)?))
}

/// Batched forward over read-only parameters, fanned out across worker
/// threads when `CTR_FORGE_THREADS` (or the machine) allows more than one.
pub fn predict(
    records: &[Record],
    schema: &Schema,
    vocab: &FeatureVocab,
    params: &ModelParams,
    eval_batch: usize,
) -> Result<ScoredSet> {
    let batch_list: Vec<_> = batches(records, schema, vocab, eval_batch, None).collect();
    let threads = worker_threads().min(batch_list.len().max(1));

    let mut probs = vec![Vec::new(); batch_list.len()];
    if threads <= 1 {
        for (slot, batch) in probs.iter_mut().zip(&batch_list) {
            let (p, _) = forward(batch, params)?;
            *slot = p;
        }
    } else {
        let results: Vec<Result<Vec<f64>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = batch_list
                .chunks(batch_list.len().div_ceil(threads))
                .map(|chunk| {
                    scope.spawn(move || {
                        chunk
                            .iter()
                            .map(|batch| forward(batch, params).map(|(p, _)| p))
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| match h.join().expect("eval worker panicked") {
                    Ok(list) => list.into_iter().map(Ok).collect::<Vec<_>>(),
                    Err(e) => vec![Err(e)],
                })
                .collect()
        });
        for (slot, result) in probs.iter_mut().zip(results) {
            *slot = result?;
        }
    }

    let scores: Vec<f64> = probs.into_iter().flatten().collect();
    let labels: Vec<f64> = records.iter().map(|r| r.label as f64).collect();
    ScoredSet::new(scores, labels)
}

/// Worker-thread cap: `CTR_FORGE_THREADS` when set, else up to 4.
fn worker_threads() -> usize {
    if let Ok(v) = std::env::var("CTR_FORGE_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism()
        .map(|n| n.get().min(4))
        .unwrap_or(1)
}

/// Renders the per-epoch metrics CSV.
pub fn metrics_csv(reports: &[EpochReport]) -> String {
    let mut out = String::from("epoch,train_logloss,eval_auc,eval_logloss,lr,seconds\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{:.3}\n",
            r.epoch, r.train_logloss, r.eval_auc, r.eval_logloss, r.lr, r.seconds
        ));
    }
    out
}
