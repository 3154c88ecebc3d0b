mod common;

use common::{random_record, random_records, small_config};
use xmmp::attribution::{AttributionReport, ExplainOptions, ExplainerKind};
use xmmp::autodiff::Tensor;
use xmmp::model::{Modality, Model};
use xmmp::perturb::{
    compare_explainers, perturb, perturbation_curve, plot_table, rank_features, read_summary_csv, write_curves_csv,
    write_summary_csv, RemovalOrder, Unit, DEFAULT_FRACTIONS,
};
use xmmp::train::auc_roc;

fn report(events: Vec<f64>, tokens: Vec<f64>, vitals: Vec<f64>) -> AttributionReport {
    let ids = (0..tokens.len() as u32).map(|i| if i == 0 { 1 } else { 5 }).collect();
    AttributionReport::new(
        1,
        ExplainerKind::Lrptrans,
        1,
        0.0,
        Tensor::new(vec![1, events.len()], events).unwrap(),
        tokens,
        ids,
        Tensor::new(vec![1, vitals.len()], vitals).unwrap(),
    )
    .unwrap()
}

fn unit(modality: Modality, index: usize) -> Unit {
    Unit { modality, index }
}

#[test]
fn ranks_by_absolute_relevance() {
    let rep = report(vec![0.5, -0.1, 0.3], vec![9.0], vec![1.0]);
    let order = rank_features(&rep);
    assert_eq!(
        order,
        vec![unit(Modality::Events, 1), unit(Modality::Events, 2), unit(Modality::Events, 0), unit(Modality::Vitals, 0)]
    );
}

#[test]
fn ties_fall_back_to_modality_and_index() {
    let rep = report(vec![0.0; 2], vec![0.0; 3], vec![0.0; 2]);
    let order = rank_features(&rep);
    assert_eq!(
        order,
        vec![
            unit(Modality::Events, 0),
            unit(Modality::Events, 1),
            unit(Modality::Notes, 1),
            unit(Modality::Notes, 2),
            unit(Modality::Vitals, 0),
            unit(Modality::Vitals, 1),
        ]
    );
}

#[test]
fn perturb_edge_cases() {
    let cfg = small_config();
    let r = random_record(&cfg, 1, 1);
    assert_eq!(perturb(&r, &[]).unwrap(), r);

    let all: Vec<Unit> = (0..r.events.values.numel())
        .map(|i| unit(Modality::Events, i))
        .chain((1..r.notes.len()).map(|i| unit(Modality::Notes, i)))
        .chain((0..r.vitals.values.numel()).map(|i| unit(Modality::Vitals, i)))
        .collect();
    let blank = perturb(&r, &all).unwrap();
    assert!(blank.events.values.data().iter().all(|&v| v == 0.0));
    assert!(blank.vitals.values.data().iter().all(|&v| v == 0.0));
    assert_eq!(blank.notes.ids[0], 1);
    assert!(blank.notes.ids[1..].iter().all(|&id| id == 0));

    let some = [unit(Modality::Events, 3), unit(Modality::Notes, 1)];
    let once = perturb(&r, &some).unwrap();
    assert_eq!(perturb(&once, &some).unwrap(), once);

    assert!(perturb(&r, &[unit(Modality::Notes, 0)]).is_err());
    assert!(perturb(&r, &[unit(Modality::Vitals, r.vitals.values.numel())]).is_err());
}

fn balanced(cfg: &xmmp::model::ModelConfig, n: usize) -> Vec<xmmp::data::MultimodalRecord> {
    let mut rs = random_records(cfg, n, 5);
    for (i, r) in rs.iter_mut().enumerate() {
        r.label = (i % 2) as u8;
    }
    rs
}

#[test]
fn curve_starts_at_the_unperturbed_auc() {
    let cfg = small_config();
    let model = Model::new(cfg.clone(), 2).unwrap();
    let records = balanced(&cfg, 12);
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    let base = auc_roc(&labels, &model.scores(&records).unwrap()).unwrap();
    let curve = perturbation_curve(
        &model,
        &records,
        ExplainerKind::Lrptrans,
        &ExplainOptions::default(),
        &DEFAULT_FRACTIONS,
        RemovalOrder::Ascending,
    )
    .unwrap();
    assert_eq!(curve.auc_roc[0], base);
    assert_eq!(curve.auc_roc.len(), 10);
    assert!((0.0..=1.0).contains(&curve.au));
}

#[test]
fn single_class_test_set_is_rejected() {
    let cfg = small_config();
    let model = Model::new(cfg.clone(), 2).unwrap();
    let mut records = balanced(&cfg, 4);
    records.iter_mut().for_each(|r| r.label = 0);
    let opts = ExplainOptions::default();
    assert!(perturbation_curve(&model, &records, ExplainerKind::Random, &opts, &DEFAULT_FRACTIONS, RemovalOrder::Ascending)
        .is_err());
}

#[test]
fn comparison_covers_all_explainers_reproducibly() {
    let cfg = small_config();
    let model = Model::new(cfg.clone(), 3).unwrap();
    let records = balanced(&cfg, 8);
    let opts = ExplainOptions { ig_steps: 3, ..ExplainOptions::default() };
    let grid = [0.0, 0.3, 0.6];
    let curves = compare_explainers(&model, &records, &ExplainerKind::ALL, &opts, &grid).unwrap();
    assert_eq!(curves.len(), 6);
    let again = compare_explainers(&model, &records, &[ExplainerKind::Random], &opts, &grid).unwrap();
    assert_eq!(again[0], curves[0]);

    let dir = tempfile::tempdir().unwrap();
    write_summary_csv(&curves, dir.path().join("au.csv")).unwrap();
    let summary = read_summary_csv(dir.path().join("au.csv")).unwrap();
    assert_eq!(summary.len(), 6);
    assert_eq!(summary[5], (ExplainerKind::Lrptrans, curves[5].au));
    write_curves_csv(&curves, dir.path().join("curves.csv")).unwrap();
    let text = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 6 * 3);
    assert_eq!(plot_table(&curves).lines().count(), 4);
}
