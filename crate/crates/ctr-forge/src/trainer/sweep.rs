//! Grid sweeps over a single hyperparameter with shared seed and data.

use super::{fit, EpochReport, TrainConfig};
use crate::data::{Record, Schema};
use crate::error::{CtrError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Lr,
    EmbedDim,
    NumHeads,
}

impl SweepParam {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lr" => Ok(SweepParam::Lr),
            "embed_dim" => Ok(SweepParam::EmbedDim),
            "num_heads" => Ok(SweepParam::NumHeads),
            _ => Err(CtrError::Arg(format!(
                "unknown sweep param `{s}` (expected lr, embed_dim, or num_heads)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Lr => "lr",
            SweepParam::EmbedDim => "embed_dim",
            SweepParam::NumHeads => "num_heads",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub param: &'static str,
    pub value: f64,
    pub best_auc: f64,
    pub best_logloss: f64,
    pub epochs_run: usize,
}

/// Trains one model per value over identical data and seed. Each row carries
/// the metrics of that run's best eval-logloss epoch.
pub fn sweep(
    param: SweepParam,
    values: &[f64],
    base: &TrainConfig,
    train: &[Record],
    test: &[Record],
    schema: &Schema,
    on_epoch: &mut dyn FnMut(&EpochReport),
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(CtrError::Arg("sweep needs at least one value".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut cfg = base.clone();
        match param {
            SweepParam::Lr => {
                if value <= 0.0 {
                    return Err(CtrError::Arg(format!("lr must be positive, got {value}")));
                }
                cfg.lr = value;
            }
            SweepParam::EmbedDim => {
                let d = as_positive_int(value, "embed_dim")?;
                cfg.model.embed_dim = d;
                if d % cfg.model.num_heads != 0 {
                    // Keep head width integral for every swept dimension.
                    cfg.model.num_heads = largest_divisor_at_most(d, cfg.model.num_heads);
                }
            }
            SweepParam::NumHeads => {
                let h = as_positive_int(value, "num_heads")?;
                if !cfg.model.embed_dim.is_multiple_of(h) {
                    return Err(CtrError::Arg(format!(
                        "num_heads {h} does not divide embed_dim {}",
                        cfg.model.embed_dim
                    )));
                }
                cfg.model.num_heads = h;
            }
        }

        let outcome = fit(train, test, schema, &cfg, on_epoch)?;
        let best = outcome
            .best_epoch
            .and_then(|e| outcome.reports.iter().find(|r| r.epoch == e));
        let (best_auc, best_logloss) = match best {
            Some(r) => (r.eval_auc, r.eval_logloss),
            None => (f64::NAN, f64::NAN),
        };
        rows.push(SweepRow {
            param: param.name(),
            value,
            best_auc,
            best_logloss,
            epochs_run: outcome.reports.len(),
        });
    }
    Ok(rows)
}

fn as_positive_int(value: f64, what: &str) -> Result<usize> {
    if value.fract() != 0.0 || value < 1.0 {
        return Err(CtrError::Arg(format!(
            "{what} must be a positive integer, got {value}"
        )));
    }
    Ok(value as usize)
}

fn largest_divisor_at_most(n: usize, cap: usize) -> usize {
    (1..=cap.min(n))
        .rev()
        .find(|&d| n.is_multiple_of(d))
        .unwrap_or(1)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("param,value,best_auc,best_logloss,epochs_run\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.param, r.value, r.best_auc, r.best_logloss, r.epochs_run
        ));
    }
    out
}

/// Direction of the best-AUC trend across the sweep, first value to last
/// ("non-decreasing" when every consecutive step holds as well).
pub fn auc_trend(rows: &[SweepRow]) -> &'static str {
    if rows.len() < 2 {
        return "n/a";
    }
    let monotone = rows.windows(2).all(|w| w[1].best_auc >= w[0].best_auc);
    let first = rows.first().unwrap().best_auc;
    let last = rows.last().unwrap().best_auc;
    if last > first {
        if monotone {
            "non-decreasing"
        } else {
            "increasing"
        }
    } else if last < first {
        "decreasing"
    } else {
        "flat"
    }
}
