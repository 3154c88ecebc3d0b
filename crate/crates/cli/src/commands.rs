use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use xmmp::attribution::{aggregate_feature_attributions, explain_all, write_reports_csv, write_reports_json};
use xmmp::data::events::read_events_csv;
use xmmp::data::matching::read_labels_csv;
use xmmp::data::notes::read_notes_jsonl;
use xmmp::data::vitals::read_vitals_csv;
use xmmp::data::{build_dataset, generate_synthetic, Dataset, DatasetMeta, MultimodalRecord, NormalValueTable, Planting, SyntheticSpec};
use xmmp::model::{load_checkpoint, save_checkpoint, Model};
use xmmp::perturb::{compare_explainers, plot_table, write_curves_csv, write_summary_csv};
use xmmp::train::{cross_validate, evaluate, train_and_test, write_rows_csv, Scores, SplitPlan, TrainConfig};

use crate::args::{Cli, Command, ModelInput, PlantingArg, RecordSet};
use crate::config::{parse_explainers, parse_list, parse_modalities, RunConfig};
use crate::error::{CliError, Result};
use crate::report;
use crate::runlog::{record_step, RunLog, Step};

pub const DATASET_FILE: &str = "dataset.json";
pub const TRUTH_FILE: &str = "ground_truth.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const SPLIT_FILE: &str = "split.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const META_FILE: &str = "dataset_meta.json";
pub const CURVES_FILE: &str = "perturbation_curves.csv";
pub const SUMMARY_FILE: &str = "perturbation_summary.csv";

/// Where a checkpoint's records came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitInfo {
    pub data: PathBuf,
    pub folds: usize,
    pub fold: usize,
    pub split_seed: u64,
    pub test: Vec<u64>,
}

#[derive(Debug, Serialize)]
struct MetricsRow<'a> {
    split: &'a str,
    records: usize,
    positives: usize,
    auc_roc: f64,
    auc_pr: f64,
}

pub fn run(cli: Cli, argv: Vec<String>) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Synth(a) => synth(a, cfg, argv),
        Command::Preprocess(a) => preprocess(a, cfg, argv),
        Command::Train(a) => train(a, cfg, argv),
        Command::Eval(a) => eval(a, cfg, argv),
        Command::Explain(a) => explain(a, cfg, argv),
        Command::Perturb(a) => perturb(a, cfg, argv),
        Command::Report(a) => {
            let top_k = a.top_k.unwrap_or(cfg.explain.top_k);
            let path = report::write_report(&a.run, top_k, a.records)?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing(path.to_path_buf()))
    }
}

fn start(dir: &Path, command: &str, argv: Vec<String>, seed: u64, cfg: &RunConfig) -> Result<RunLog> {
    let mut log = RunLog::open(dir)?;
    log.event("start", json!({ "command": command, "argv": argv, "seed": seed, "config": cfg }))?;
    record_step(dir, Step { command: command.into(), argv, seed, config: cfg.clone() })?;
    Ok(log)
}

fn load_dataset(path: &Path) -> Result<(PathBuf, Dataset)> {
    let file = if path.is_dir() { path.join(DATASET_FILE) } else { path.to_path_buf() };
    require(&file)?;
    let ds = Dataset::load(&file)?;
    if ds.is_empty() {
        return Err(xmmp::Error::Data(format!("{} holds no records", file.display())).into());
    }
    Ok((file, ds))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).map_err(|e| CliError::io(path, e))
}

fn write_metrics(path: &Path, split: &str, records: &[MultimodalRecord], scores: &Scores) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.serialize(MetricsRow {
        split,
        records: records.len(),
        positives: records.iter().filter(|r| r.label == 1).count(),
        auc_roc: scores.auc_roc,
        auc_pr: scores.auc_pr,
    })?;
    w.flush().map_err(|e| CliError::io(path, e))
}

fn synth(a: crate::args::SynthArgs, cfg: RunConfig, argv: Vec<String>) -> Result<()> {
    let spec = SyntheticSpec {
        records: a.records,
        positive_rate: a.positive_rate,
        label_noise: a.label_noise,
        hours: a.hours,
        vital_steps: a.vital_steps,
        planting: match a.planting {
            PlantingArg::AllThree => Planting::AllThree,
            PlantingArg::Complementary => Planting::Complementary,
        },
        ..SyntheticSpec::default()
    };
    let mut log = start(&a.out, "synth", argv, a.seed, &cfg)?;
    let (ds, truth) = generate_synthetic(&spec, a.seed)?;
    ds.save(a.out.join(DATASET_FILE))?;
    truth.save(a.out.join(TRUTH_FILE))?;
    log.event(
        "synth",
        json!({ "records": ds.len(), "positives": ds.positives(), "token": truth.token, "event_feature": truth.event_feature }),
    )
}

fn preprocess(a: crate::args::PreprocessArgs, cfg: RunConfig, argv: Vec<String>) -> Result<()> {
    for p in [&a.events, &a.notes, &a.vitals, &a.labels] {
        require(p)?;
    }
    let table = match &a.table {
        Some(p) => {
            require(p)?;
            NormalValueTable::load(p)?
        }
        None => NormalValueTable::default(),
    };
    let mut log = start(&a.out, "preprocess", argv, cfg.seeds[0], &cfg)?;
    let labels = read_labels_csv(&a.labels)?;
    let ds = build_dataset(read_events_csv(&a.events)?, read_notes_jsonl(&a.notes)?, read_vitals_csv(&a.vitals)?, &labels, &table)?;
    if ds.is_empty() {
        return Err(xmmp::Error::Data("no stay has events, notes, vitals and a label".into()).into());
    }
    ds.save(a.out.join(DATASET_FILE))?;
    log.event("preprocess", json!({ "records": ds.len(), "positives": ds.positives(), "vocabulary": ds.meta.vocabulary.len() }))
}

fn train(a: crate::args::TrainArgs, mut cfg: RunConfig, argv: Vec<String>) -> Result<()> {
    if let Some(s) = &a.seeds {
        cfg.seeds = parse_list(s, "seed")?;
    }
    if let Some(s) = a.seed {
        cfg.seeds.retain(|&x| x != s);
        cfg.seeds.insert(0, s);
    }
    let t = &mut cfg.train;
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.learning_rate = a.learning_rate.unwrap_or(t.learning_rate);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    if a.patience.is_some() {
        t.patience = a.patience;
    }
    if let Some(m) = &a.modalities {
        cfg.model.modalities = parse_modalities(m)?;
    }
    cfg.validate()?;
    let (data_path, ds) = load_dataset(&a.data)?;
    let seed = cfg.seeds[0];
    let mut log = start(&a.out, "train", argv, seed, &cfg)?;

    let base = cfg.model_config(&ds);
    let plan = SplitPlan::stratified(&ds.labels(), cfg.split.folds, cfg.split.split_seed)?;
    let (train_idx, test_idx) = plan.fold(cfg.split.fold);
    let tc = TrainConfig { seed, ..cfg.train.clone() };
    let held = train_and_test(&ds, &base, &tc, &train_idx, &test_idx, cfg.split.val_fraction)?;
    for e in &held.outcome.history {
        log.event("epoch", json!(e))?;
    }

    let meta = DatasetMeta { stats: Some(held.stats.clone()), ..ds.meta.clone() };
    save_checkpoint(&held.model, Some(&meta), a.out.join(CHECKPOINT_FILE))?;
    let data = fs::canonicalize(&data_path).map_err(|e| CliError::io(&data_path, e))?;
    let split = SplitInfo {
        data,
        folds: cfg.split.folds,
        fold: cfg.split.fold,
        split_seed: cfg.split.split_seed,
        test: held.test_records.iter().map(|r| r.stay_id).collect(),
    };
    write_json(&a.out.join(SPLIT_FILE), &split)?;
    let history = a.out.join("history.csv");
    let mut w = csv::Writer::from_path(&history)?;
    for e in &held.outcome.history {
        w.serialize(e)?;
    }
    w.flush().map_err(|e| CliError::io(&history, e))?;
    write_metrics(&a.out.join(METRICS_FILE), "test", &held.test_records, &held.scores)?;
    log.event(
        "metrics",
        json!({ "split": "test", "auc_roc": held.scores.auc_roc, "auc_pr": held.scores.auc_pr, "best_epoch": held.outcome.best_epoch }),
    )?;

    if a.cv {
        let rows = cross_validate(&ds, &base, &cfg.train, cfg.split.folds, &cfg.seeds, cfg.split.split_seed, 0)?;
        write_rows_csv(&rows, a.out.join("cv_metrics.csv"))?;
        let summary = xmmp::train::MetricResult::from_rows(&rows);
        log.event("cross-validation", json!(summary))?;
    }
    Ok(())
}

struct Loaded {
    model: Model,
    meta: Option<DatasetMeta>,
    records: Vec<MultimodalRecord>,
    out: PathBuf,
}

fn load_model_input(input: &ModelInput) -> Result<Loaded> {
    let ckpt = if input.model.is_dir() { input.model.join(CHECKPOINT_FILE) } else { input.model.clone() };
    require(&ckpt)?;
    let model_dir = ckpt.parent().map(Path::to_path_buf).unwrap_or_default();
    let split_path = model_dir.join(SPLIT_FILE);
    let split: Option<SplitInfo> = match fs::read(&split_path) {
        Ok(bytes) => Some(serde_json::from_slice(&bytes)?),
        Err(_) => None,
    };
    let data = match (&input.data, &split) {
        (Some(d), _) => d.clone(),
        (None, Some(s)) => s.data.clone(),
        (None, None) => {
            return Err(CliError::Usage(format!("--data is required: {} not found", split_path.display())));
        }
    };
    let checkpoint = load_checkpoint(&ckpt)?;
    let (_, ds) = load_dataset(&data)?;
    let mut records = ds.records;
    if input.records == RecordSet::Test {
        let Some(split) = &split else {
            return Err(CliError::Usage(format!("--records test needs {}", split_path.display())));
        };
        let test: std::collections::BTreeSet<u64> = split.test.iter().copied().collect();
        records.retain(|r| test.contains(&r.stay_id));
        if records.len() != test.len() {
            return Err(xmmp::Error::Data(format!("{} of {} test stays are missing from the dataset", test.len() - records.len(), test.len())).into());
        }
    }
    if let Some(stats) = checkpoint.meta.as_ref().and_then(|m| m.stats.as_ref()) {
        records = records.iter().map(|r| stats.apply(r)).collect::<xmmp::Result<_>>()?;
    } else {
        log::warn!("checkpoint has no normalisation statistics; using records as stored");
    }
    let out = input.out.clone().unwrap_or(model_dir);
    Ok(Loaded { model: checkpoint.model, meta: checkpoint.meta.or(Some(ds.meta)), records, out })
}

fn eval(a: crate::args::EvalArgs, cfg: RunConfig, argv: Vec<String>) -> Result<()> {
    let l = load_model_input(&a.input)?;
    let mut log = start(&l.out, "eval", argv, cfg.seeds[0], &cfg)?;
    let scores = evaluate(&l.model, &l.records)?;
    let split = if a.input.records == RecordSet::Test { "test" } else { "all" };
    write_metrics(&l.out.join(METRICS_FILE), split, &l.records, &scores)?;
    let path = l.out.join("predictions.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["stay_id", "label", "death_probability"])?;
    for (r, p) in l.records.iter().zip(l.model.scores(&l.records)?) {
        w.write_record([r.stay_id.to_string(), r.label.to_string(), p.to_string()])?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    log.event("metrics", json!({ "split": split, "auc_roc": scores.auc_roc, "auc_pr": scores.auc_pr }))
}

fn explain(a: crate::args::ExplainArgs, mut cfg: RunConfig, argv: Vec<String>) -> Result<()> {
    if let Some(e) = &a.explainers {
        cfg.explain.explainers = parse_explainers(e)?;
    }
    cfg.explain.target = a.target.unwrap_or(cfg.explain.target);
    cfg.explain.min_token_count = a.min_token_count.unwrap_or(cfg.explain.min_token_count);
    cfg.validate()?;
    let l = load_model_input(&a.input)?;
    let meta = l.meta.clone().expect("dataset metadata");
    let mut log = start(&l.out, "explain", argv, cfg.seeds[0], &cfg)?;
    write_json(&l.out.join(META_FILE), &meta)?;
    let opts = cfg.explain_options();
    for &kind in &cfg.explain.explainers {
        let reports = explain_all(&l.model, &l.records, kind, cfg.explain.target, &opts)?;
        write_reports_json(&reports, l.out.join(format!("attributions_{kind}.json")))?;
        write_reports_csv(&reports, l.out.join(format!("attributions_{kind}.csv")))?;
        let positives: Vec<_> = reports.iter().zip(&l.records).filter(|(_, r)| r.label == 1).map(|(p, _)| p.clone()).collect();
        let cohort = if positives.is_empty() {
            log::warn!("no positive records; ranking features over all records");
            reports.clone()
        } else {
            positives
        };
        let ranking = aggregate_feature_attributions(&cohort, &meta, cfg.explain.min_token_count)?;
        write_json(&l.out.join(format!("ranking_{kind}.json")), &ranking)?;
        let k = cfg.explain.top_k;
        log.event(
            "explain",
            json!({ "explainer": kind, "records": reports.len(), "top_events": ranking.top_events(k), "top_tokens": ranking.top_tokens(k) }),
        )?;
    }
    Ok(())
}

fn perturb(a: crate::args::PerturbArgs, mut cfg: RunConfig, argv: Vec<String>) -> Result<()> {
    if let Some(e) = &a.explainers {
        cfg.explain.explainers = parse_explainers(e)?;
    }
    if let Some(f) = &a.fractions {
        cfg.explain.fractions = parse_list(f, "fraction")?;
    }
    cfg.explain.ig_steps = a.ig_steps.unwrap_or(cfg.explain.ig_steps);
    cfg.validate()?;
    let l = load_model_input(&a.input)?;
    let mut log = start(&l.out, "perturb", argv, cfg.seeds[0], &cfg)?;
    let curves = compare_explainers(&l.model, &l.records, &cfg.explain.explainers, &cfg.explain_options(), &cfg.explain.fractions)?;
    write_curves_csv(&curves, l.out.join(CURVES_FILE))?;
    write_summary_csv(&curves, l.out.join(SUMMARY_FILE))?;
    let plot = l.out.join("perturbation_plot.txt");
    fs::write(&plot, plot_table(&curves)).map_err(|e| CliError::io(&plot, e))?;
    for c in &curves {
        log.event("perturb", json!({ "explainer": c.explainer, "au": c.au, "auc_roc": c.auc_roc }))?;
    }
    Ok(())
}
