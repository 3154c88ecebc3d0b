//! Repeated evaluation: k-fold cross-validation, seed repeats, grid search.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::split::{stratified_holdout, SplitPlan};
use super::trainer::{evaluate, normalize_with_train_stats, train_model, Scores, TrainConfig, TrainOutcome};
use crate::data::record::MultimodalRecord;
use crate::data::stats::NormStats;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::seed::{derive_seed, rng_for};

/// Mean and normal-approximation 95% interval of repeated measurements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub values: Vec<f64>,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Summary {
    /// mean ± 1.96·sd/√n with the sample standard deviation.
    pub fn of(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let half = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            1.96 * var.sqrt() / n.sqrt()
        } else {
            0.0
        };
        Self { values, mean, ci_low: mean - half, ci_high: mean + half }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub auc_roc: Summary,
    pub auc_pr: Summary,
}

impl MetricResult {
    pub fn from_rows(rows: &[RunRow]) -> Self {
        Self {
            auc_roc: Summary::of(rows.iter().map(|r| r.auc_roc).collect()),
            auc_pr: Summary::of(rows.iter().map(|r| r.auc_pr).collect()),
        }
    }
}

/// One trained-and-tested run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub config_id: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub layers: usize,
    pub heads: usize,
    pub pos_weight: f64,
    pub fold: usize,
    pub seed: u64,
    pub epochs_run: usize,
    pub val_auc_roc: f64,
    pub auc_roc: f64,
    pub auc_pr: f64,
}

fn run_row(config_id: usize, cfg: &TrainConfig, fold: usize, seed: u64) -> RunRow {
    RunRow {
        config_id,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        dropout: cfg.dropout,
        layers: cfg.layers,
        heads: cfg.heads,
        pos_weight: cfg.pos_weight,
        fold,
        seed,
        epochs_run: 0,
        val_auc_roc: f64::NAN,
        auc_roc: f64::NAN,
        auc_pr: f64::NAN,
    }
}

/// A model trained on one split, with its normalised test records.
#[derive(Clone, Debug)]
pub struct HeldOut {
    pub model: Model,
    pub scores: Scores,
    pub outcome: TrainOutcome,
    pub test_records: Vec<MultimodalRecord>,
    pub stats: NormStats,
}

/// Trains on `train` (with a stratified validation hold-out of
/// `val_fraction`) and scores `test`.
pub fn train_and_test(
    ds: &Dataset,
    base: &ModelConfig,
    cfg: &TrainConfig,
    train: &[usize],
    test: &[usize],
    val_fraction: f64,
) -> Result<HeldOut> {
    let labels = ds.labels();
    let mut rng = rng_for(cfg.seed, "holdout");
    let (fit, val) = stratified_holdout(train, &labels, val_fraction, &mut rng);
    let (records, stats) = normalize_with_train_stats(ds, &fit)?;
    let outcome = train_model(base, &records, &fit, &val, cfg)?;
    let test_records: Vec<_> = test.iter().map(|&i| records[i].clone()).collect();
    let scores = evaluate(&outcome.model, &test_records)?;
    Ok(HeldOut { model: outcome.model.clone(), scores, outcome, test_records, stats })
}

/// k-fold cross-validation repeated over `seeds`. The fold plan depends
/// only on `split_seed`; each seed controls initialisation, shuffling,
/// dropout and the validation hold-out.
pub fn cross_validate(
    ds: &Dataset,
    base: &ModelConfig,
    cfg: &TrainConfig,
    k: usize,
    seeds: &[u64],
    split_seed: u64,
    config_id: usize,
) -> Result<Vec<RunRow>> {
    let plan = SplitPlan::stratified(&ds.labels(), k, split_seed)?;
    let mut rows = Vec::new();
    for &seed in seeds {
        for fold in 0..k {
            let (train, test) = plan.fold(fold);
            let run_cfg = TrainConfig { seed: derive_seed(seed, &format!("fold{fold}")), ..cfg.clone() };
            let HeldOut { scores, outcome, .. } = train_and_test(ds, base, &run_cfg, &train, &test, 0.2)?;
            let mut row = run_row(config_id, cfg, fold, seed);
            row.epochs_run = outcome.history.len();
            row.val_auc_roc = outcome.best_val_auc_roc.unwrap_or(f64::NAN);
            row.auc_roc = scores.auc_roc;
            row.auc_pr = scores.auc_pr;
            log::info!("config {config_id} seed {seed} fold {fold}: AUC-ROC {:.4} AUC-PR {:.4}", row.auc_roc, row.auc_pr);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Discrete hyperparameter space; every combination is tried.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpace {
    pub batch_size: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub dropout: Vec<f64>,
    pub layers: Vec<usize>,
    pub heads: Vec<usize>,
    pub pos_weight: Vec<f64>,
}

impl GridSpace {
    /// Endpoints and midpoints of the published per-modality ranges.
    pub fn published(modality: crate::model::Modality) -> Self {
        use crate::model::Modality::*;
        let (batch, lr, layers) = match modality {
            Vitals => (vec![8, 16, 32], vec![1e-5, 1e-4, 1e-3], vec![1, 2, 4]),
            Notes => (vec![8, 16, 32], vec![1e-5, 3e-5, 1e-4], vec![5, 7, 10]),
            Events => (vec![128, 256, 512], vec![1e-5, 1e-4, 1e-3, 1e-2], vec![1, 3, 6]),
        };
        Self {
            batch_size: batch,
            learning_rate: lr,
            dropout: vec![0.1, 0.3, 0.5],
            layers,
            heads: vec![4, 8, 16, 32],
            pos_weight: vec![1.0, 2.0, 3.0],
        }
    }

    pub fn single(cfg: &TrainConfig) -> Self {
        Self {
            batch_size: vec![cfg.batch_size],
            learning_rate: vec![cfg.learning_rate],
            dropout: vec![cfg.dropout],
            layers: vec![cfg.layers],
            heads: vec![cfg.heads],
            pos_weight: vec![cfg.pos_weight],
        }
    }

    /// All combinations, in a fixed nested order, on top of `base`.
    pub fn configs(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &batch_size in &self.batch_size {
            for &learning_rate in &self.learning_rate {
                for &dropout in &self.dropout {
                    for &layers in &self.layers {
                        for &heads in &self.heads {
                            for &pos_weight in &self.pos_weight {
                                out.push(TrainConfig {
                                    batch_size,
                                    learning_rate,
                                    dropout,
                                    layers,
                                    heads,
                                    pos_weight,
                                    ..base.clone()
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct GridResult {
    pub best: TrainConfig,
    pub best_id: usize,
    pub metrics: MetricResult,
    pub rows: Vec<RunRow>,
}

/// Cross-validates every configuration and picks the one with the highest
/// mean validation AUC-ROC (ties: earliest configuration).
pub fn grid_search(
    space: &GridSpace,
    base_train: &TrainConfig,
    ds: &Dataset,
    base_model: &ModelConfig,
    k: usize,
    seeds: &[u64],
    split_seed: u64,
) -> Result<GridResult> {
    let configs = space.configs(base_train);
    if configs.is_empty() {
        return Err(Error::InvalidArgument("empty hyperparameter space".into()));
    }
    let mut rows = Vec::new();
    let mut best: Option<(f64, usize)> = None;
    for (id, cfg) in configs.iter().enumerate() {
        let r = cross_validate(ds, base_model, cfg, k, seeds, split_seed, id)?;
        let val = r.iter().map(|x| x.val_auc_roc).sum::<f64>() / r.len() as f64;
        if best.is_none_or(|(b, _)| val > b) {
            best = Some((val, id));
        }
        rows.extend(r);
    }
    let (_, best_id) = best.expect("non-empty");
    let chosen: Vec<RunRow> = rows.iter().filter(|r| r.config_id == best_id).cloned().collect();
    Ok(GridResult { best: configs[best_id].clone(), best_id, metrics: MetricResult::from_rows(&chosen), rows })
}

/// Writes run rows as CSV (header included).
pub fn write_rows_csv(rows: &[RunRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
