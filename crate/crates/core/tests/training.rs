mod common;

use common::{random_records, small_config};
use xmmp::data::{generate_synthetic, SyntheticSpec};
use xmmp::model::{EncoderConfig, ModelConfig};
use xmmp::train::{
    cross_validate, grid_search, normalize_with_train_stats, train_model, write_rows_csv, GridSpace, TrainConfig,
};

fn tiny_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 10,
        learning_rate: 1e-2,
        dropout: 0.0,
        layers: 1,
        heads: 2,
        epochs,
        patience: None,
        upsample: false,
        ..TrainConfig::default()
    }
}

#[test]
fn model_memorises_a_small_cohort() {
    let cfg = small_config();
    let records = random_records(&cfg, 50, 1);
    let train: Vec<usize> = (0..50).collect();
    let out = train_model(&cfg, &records, &train, &[], &tiny_train(200)).unwrap();
    let first = out.history[0].loss;
    let last = out.history.last().unwrap().loss;
    assert!(last <= 0.1 * first, "loss {first} -> {last}");
    assert_eq!(out.history.len(), 200);
    assert!(out.best_val_auc_roc.is_none());
}

#[test]
fn training_is_deterministic() {
    let cfg = small_config();
    let records = random_records(&cfg, 20, 2);
    let train: Vec<usize> = (0..14).collect();
    let val: Vec<usize> = (14..20).collect();
    let run = || train_model(&cfg, &records, &train, &val, &TrainConfig { dropout: 0.2, ..tiny_train(3) }).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.model, b.model);
    assert_eq!(a.history, b.history);
}

#[test]
fn early_stopping_respects_patience() {
    let cfg = small_config();
    let records = random_records(&cfg, 30, 3);
    let train: Vec<usize> = (0..20).collect();
    let val: Vec<usize> = (20..30).collect();
    let tc = TrainConfig { patience: Some(2), ..tiny_train(40) };
    let out = train_model(&cfg, &records, &train, &val, &tc).unwrap();
    let last = out.history.last().unwrap().epoch;
    assert!(last <= out.best_epoch + 2);
    let best = out.history.iter().filter_map(|h| h.val_auc_roc).fold(f64::MIN, f64::max);
    assert_eq!(out.best_val_auc_roc, Some(best));
}

#[test]
fn empty_training_set_is_an_error() {
    let cfg = small_config();
    let records = random_records(&cfg, 4, 4);
    assert!(train_model(&cfg, &records, &[], &[], &tiny_train(1)).is_err());
}

fn synthetic_setup() -> (xmmp::data::Dataset, ModelConfig) {
    let spec = SyntheticSpec { records: 60, positive_rate: 0.25, vital_steps: 6, note_words_min: 4, note_words_max: 8, hours: 6, ..Default::default() };
    let (ds, _) = generate_synthetic(&spec, 5).unwrap();
    let enc = EncoderConfig { layers: 1, heads: 2, ffn: 8 };
    let model = ModelConfig { hidden: 4, fusion_hidden: 4, events: enc, notes: enc, vitals: enc, ..ModelConfig::default() }
        .sized_for(&ds);
    (ds, model)
}

#[test]
fn normalisation_uses_training_rows_only() {
    let (ds, _) = synthetic_setup();
    let train: Vec<usize> = (0..30).collect();
    let (records, stats) = normalize_with_train_stats(&ds, &train).unwrap();
    let (full_records, full_stats) = normalize_with_train_stats(&ds, &(0..60).collect::<Vec<_>>()).unwrap();
    assert_ne!(stats, full_stats);
    assert_eq!(records.len(), full_records.len());
}

#[test]
fn cross_validation_rows_are_reproducible() {
    let (ds, model) = synthetic_setup();
    let tc = TrainConfig { heads: 2, layers: 1, epochs: 2, patience: None, batch_size: 16, ..TrainConfig::default() };
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for run in 0..2 {
        let rows = cross_validate(&ds, &model, &tc, 3, &[0, 1], 7, 0).unwrap();
        assert_eq!(rows.len(), 6);
        let path = dir.path().join(format!("rows{run}.csv"));
        write_rows_csv(&rows, &path).unwrap();
        files.push(std::fs::read(path).unwrap());
    }
    assert_eq!(files[0], files[1]);
    let header = String::from_utf8(files[0].clone()).unwrap();
    assert!(header.starts_with("config_id,batch_size,learning_rate,dropout,layers,heads,pos_weight,fold,seed,epochs_run,val_auc_roc,auc_roc,auc_pr"));
}

#[test]
fn grid_search_picks_a_configuration() {
    let (ds, model) = synthetic_setup();
    let tc = TrainConfig { heads: 2, layers: 1, epochs: 1, patience: None, batch_size: 16, ..TrainConfig::default() };
    let mut space = GridSpace::single(&tc);
    space.learning_rate = vec![1e-3, 1e-2];
    let result = grid_search(&space, &tc, &ds, &model, 2, &[0], 3).unwrap();
    assert_eq!(result.rows.len(), 4);
    assert!(result.best_id < 2);
    assert_eq!(result.best.learning_rate, space.learning_rate[result.best_id]);
    assert_eq!(result.metrics.auc_roc.values.len(), 2);

    space.heads.clear();
    assert!(grid_search(&space, &tc, &ds, &model, 2, &[0], 3).is_err());
}
