mod common;

use xmmp::data::{generate_synthetic, Planting, SyntheticSpec};

#[test]
fn event_golden() {
    common::check_events_golden().unwrap();
}

#[test]
fn notes_golden() {
    common::check_notes_golden().unwrap();
}

#[test]
fn vitals_golden() {
    common::check_vitals_golden().unwrap();
}

#[test]
fn prevalence_stays_within_binomial_bounds() {
    let spec = SyntheticSpec { records: 5000, note_words_min: 2, note_words_max: 4, vital_steps: 4, hours: 4, ..Default::default() };
    let (ds, _) = generate_synthetic(&spec, 11).unwrap();
    let rate = ds.positives() as f64 / 5000.0;
    let sd = (0.1 * 0.9 / 5000.0f64).sqrt();
    assert!((rate - 0.1).abs() < 3.0 * sd, "rate {rate}");
}

#[test]
fn noiseless_planted_indicators_separate_perfectly() {
    let spec = SyntheticSpec {
        records: 300,
        label_noise: 0.0,
        hours: 6,
        vital_steps: 8,
        note_words_min: 3,
        note_words_max: 6,
        ..Default::default()
    };
    let (ds, truth) = generate_synthetic(&spec, 3).unwrap();
    assert_eq!(spec.planting, Planting::AllThree);
    let labels = ds.labels();
    // Linear probe: count of planted-token occurrences.
    let scores: Vec<f64> = ds
        .records
        .iter()
        .map(|r| r.notes.ids.iter().filter(|&&id| id == truth.token_id).count() as f64)
        .collect();
    assert_eq!(xmmp::train::auc_roc(&labels, &scores).unwrap(), 1.0);
}
