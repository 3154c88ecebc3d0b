//! Mini-batch training with early stopping on validation AUC-ROC.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{cross_entropy, logit_gradient};
use super::metrics::{auc_pr, auc_roc};
use super::optim::{clip_global_norm, lr_schedule, Adam, Grads};
use super::split::upsample_positives;
use crate::autodiff::Tensor;
use crate::data::record::MultimodalRecord;
use crate::data::stats::NormStats;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, Prediction};
use crate::nn::Graph;
use crate::seed::{derive_seed, rng_for};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    /// Transformer blocks per encoder.
    pub layers: usize,
    pub heads: usize,
    /// Weight w⁺ of the positive-class loss term.
    pub pos_weight: f64,
    pub epochs: usize,
    /// Stop after this many epochs without a better validation AUC-ROC.
    pub patience: Option<usize>,
    pub upsample: bool,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 1e-3,
            dropout: 0.1,
            layers: 2,
            heads: 4,
            pos_weight: 1.0,
            epochs: 50,
            patience: Some(10),
            upsample: true,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch size and epochs must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.pos_weight <= 0.0 || self.clip_norm <= 0.0 {
            return bad("class weight and clip norm must be positive".into());
        }
        Ok(())
    }

    /// `base` with this configuration's depth, heads and dropout applied to
    /// every encoder.
    pub fn model_config(&self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        for e in [&mut c.events, &mut c.notes, &mut c.vitals] {
            e.layers = self.layers;
            e.heads = self.heads;
        }
        c.dropout = self.dropout;
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean training loss over the epoch's (upsampled) records.
    pub loss: f64,
    pub val_auc_roc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch (the last epoch without a
    /// validation set).
    pub model: Model,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_auc_roc: Option<f64>,
}

/// Test-set discrimination.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub auc_roc: f64,
    pub auc_pr: f64,
}

pub fn evaluate(model: &Model, records: &[MultimodalRecord]) -> Result<Scores> {
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    let scores = model.scores(records)?;
    Ok(Scores { auc_roc: auc_roc(&labels, &scores)?, auc_pr: auc_pr(&labels, &scores)? })
}

/// Fits normalisation statistics on `train` and applies them to every
/// record of the dataset.
pub fn normalize_with_train_stats(ds: &Dataset, train: &[usize]) -> Result<(Vec<MultimodalRecord>, NormStats)> {
    let fit_on: Vec<&MultimodalRecord> = train.iter().map(|&i| &ds.records[i]).collect();
    let stats = NormStats::fit(&fit_on, &ds.meta.event_continuous)?;
    let records = ds.records.iter().map(|r| stats.apply(r)).collect::<Result<Vec<_>>>()?;
    Ok((records, stats))
}

/// Adds `scale ×` the gradient of one record's loss to `acc`; returns the
/// unscaled loss.
fn accumulate_record(
    model: &Model,
    r: &MultimodalRecord,
    pos_weight: f64,
    scale: f64,
    rng: ChaCha8Rng,
    acc: &mut Grads,
) -> Result<f64> {
    let mut g = Graph::training(&model.params, model.config.dropout, rng);
    let inputs = model.bind_inputs(&mut g, r, false)?;
    let z = model.logits(&mut g, &inputs)?;
    let v = g.tape.value(z).data();
    let pred = Prediction::from_logits([v[0], v[1]]);
    let loss = cross_entropy(r.label, pred.probs[1], pos_weight);
    let dz = logit_gradient(r.label, pred.probs, pos_weight);
    g.tape.backward_with_seed(z, Tensor::vector(vec![dz[0] * scale, dz[1] * scale]))?;
    for (name, var) in g.bound_params() {
        if let Some(grad) = g.tape.grad(*var) {
            match acc.get_mut(name) {
                Some(a) => a.add_assign(grad),
                None => {
                    acc.insert(name.clone(), grad.clone());
                }
            }
        }
    }
    Ok(loss)
}

/// Trains a fresh model on `records[train]`, validating on `records[val]`
/// after every epoch when `val` is non-empty.
pub fn train_model(
    model_config: &ModelConfig,
    records: &[MultimodalRecord],
    train: &[usize],
    val: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let mut model = Model::new(cfg.model_config(model_config), derive_seed(cfg.seed, "init"))?;
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    let val_records: Vec<MultimodalRecord> = val.iter().map(|&i| records[i].clone()).collect();
    let mut order_rng = rng_for(cfg.seed, "order");
    let mut dropout_rng = rng_for(cfg.seed, "dropout");
    let mut adam = Adam::default();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Model)> = None;

    for epoch in 0..cfg.epochs {
        let order = if cfg.upsample {
            upsample_positives(train, &labels, &mut order_rng)?
        } else {
            let mut o = train.to_vec();
            rand::seq::SliceRandom::shuffle(o.as_mut_slice(), &mut order_rng);
            o
        };
        let lr = lr_schedule(cfg.learning_rate, epoch);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Grads::new();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let rng = ChaCha8Rng::seed_from_u64(dropout_rng.gen());
                total += accumulate_record(&model, &records[i], cfg.pos_weight, scale, rng, &mut grads)?;
            }
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam.step(&mut model.params, &grads, lr)?;
        }
        let loss = total / order.len() as f64;
        let val_auc = if val_records.is_empty() { None } else { Some(evaluate(&model, &val_records)?.auc_roc) };
        log::debug!("epoch {epoch}: loss {loss:.5} val AUC-ROC {val_auc:?}");
        history.push(EpochStats { epoch, learning_rate: lr, loss, val_auc_roc: val_auc });
        if let Some(auc) = val_auc {
            if best.as_ref().is_none_or(|(b, _, _)| auc > *b) {
                best = Some((auc, epoch, model.clone()));
            }
            let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
            if cfg.patience.is_some_and(|p| epoch - best_epoch >= p) {
                break;
            }
        }
    }
    Ok(match best {
        Some((auc, epoch, model)) => TrainOutcome { model, history, best_epoch: epoch, best_val_auc_roc: Some(auc) },
        None => {
            let last = history.len() - 1;
            TrainOutcome { model, history, best_epoch: last, best_val_auc_roc: None }
        }
    })
}
