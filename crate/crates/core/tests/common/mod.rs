#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use xmmp::autodiff::Tensor;
use xmmp::data::{EventSequence, MultimodalRecord, NoteTokens, VitalSigns};
use xmmp::model::{EncoderConfig, Modality, ModelConfig};

pub const HOURS: usize = 5;
pub const STEPS: usize = 7;

pub fn small_config() -> ModelConfig {
    let enc = EncoderConfig { layers: 2, heads: 2, ffn: 12 };
    ModelConfig {
        event_width: 4,
        vital_channels: 3,
        vocab_size: 20,
        max_note_len: 10,
        hidden: 8,
        fusion_hidden: 6,
        events: enc,
        notes: enc,
        vitals: enc,
        ..ModelConfig::default()
    }
}

pub fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

/// Standard-normal grids and 2..=9 random non-reserved tokens after `[CLS]`.
pub fn random_record(cfg: &ModelConfig, stay_id: u64, seed: u64) -> MultimodalRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..cfg.max_note_len);
    let mut ids = vec![1u32];
    ids.extend((0..n).map(|_| rng.gen_range(3..cfg.vocab_size as u32)));
    MultimodalRecord {
        stay_id,
        events: EventSequence::new(normal_matrix(HOURS, cfg.event_width, &mut rng)).unwrap(),
        notes: NoteTokens::new(ids).unwrap(),
        vitals: VitalSigns::new(normal_matrix(STEPS, cfg.vital_channels, &mut rng)).unwrap(),
        label: (seed % 2) as u8,
    }
}

pub fn random_records(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<MultimodalRecord> {
    (0..n as u64).map(|i| random_record(cfg, i + 1, seed.wrapping_mul(1000).wrapping_add(i))).collect()
}

use std::sync::Arc;

use xmmp::autodiff::{grad_check, Tape, Var};
use xmmp::model::{BoundInputs, Model};
use xmmp::nn::{Graph, Mode};
use xmmp::Result;

/// Sum of `y` weighted by fixed pseudo-random coefficients, so that no
/// coordinate of the gradient vanishes by symmetry.
pub fn weighted_sum(t: &mut Tape, y: Var) -> Result<Var> {
    let shape = t.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64 + 17);
    let w = t.constant(Tensor::new(shape, (0..n).map(|_| rng.gen_range(0.5..1.5) * if rng.gen() { 1.0 } else { -1.0 }).collect())?);
    let p = t.mul(y, w)?;
    t.sum_all(p)
}

pub type Probe = Box<dyn Fn(&mut Tape, Var) -> Result<Var>>;

/// One differentiable probe per primitive (detach excluded), with the input
/// shape and whether the point must be positive.
pub fn primitive_probes() -> Vec<(&'static str, [usize; 2], bool, Probe)> {
    let c23 = Tensor::new(vec![2, 3], vec![0.3, -1.2, 0.7, 1.1, 0.4, -0.6]).unwrap();
    let c32 = Tensor::new(vec![3, 2], vec![0.5, -0.2, 1.3, 0.8, -0.9, 0.1]).unwrap();
    let mut v: Vec<(&'static str, [usize; 2], bool, Probe)> = Vec::new();
    let c = c23.clone();
    v.push(("add", [2, 3], false, Box::new(move |t, x| { let k = t.constant(c.clone()); let y = t.add(x, k)?; let y = t.mul(y, y)?; weighted_sum(t, y) })));
    let c = c23.clone();
    v.push(("sub", [2, 3], false, Box::new(move |t, x| { let k = t.constant(c.clone()); let y = t.sub(k, x)?; let y = t.mul(y, x)?; weighted_sum(t, y) })));
    v.push(("mul", [2, 3], false, Box::new(|t, x| { let y = t.mul(x, x)?; weighted_sum(t, y) })));
    let c = c23.clone();
    v.push(("div", [2, 3], true, Box::new(move |t, x| { let k = t.constant(c.clone()); let y = t.div(k, x)?; let z = t.div(x, y)?; weighted_sum(t, z) })));
    let c = c32.clone();
    v.push(("matmul", [2, 3], false, Box::new(move |t, x| { let k = t.constant(c.clone()); let y = t.matmul(x, k)?; let xt = t.transpose(x)?; let z = t.matmul(xt, y)?; weighted_sum(t, z) })));
    v.push(("transpose", [2, 3], false, Box::new(|t, x| { let y = t.transpose(x)?; let y = t.mul(y, y)?; weighted_sum(t, y) })));
    v.push(("reshape", [2, 3], false, Box::new(|t, x| { let y = t.reshape(x, &[3, 2])?; let y = t.mul(y, y)?; weighted_sum(t, y) })));
    v.push(("concat", [2, 3], false, Box::new(|t, x| { let s = t.mul(x, x)?; let y = t.concat(&[x, s], 1)?; let y = t.concat(&[y, y], 0)?; weighted_sum(t, y) })));
    v.push(("slice", [2, 3], false, Box::new(|t, x| { let s = t.mul(x, x)?; let y = t.slice(s, 1, 1, 3)?; weighted_sum(t, y) })));
    v.push(("sum-over-axis", [2, 3], false, Box::new(|t, x| { let s = t.mul(x, x)?; let y = t.sum_axis(s, 0)?; weighted_sum(t, y) })));
    v.push(("mean-over-axis", [2, 3], false, Box::new(|t, x| { let s = t.mul(x, x)?; let y = t.mean_axis(s, 1)?; weighted_sum(t, y) })));
    v.push(("max-over-axis", [2, 3], false, Box::new(|t, x| { let s = t.mul(x, x)?; let y = t.max_axis(s, 1)?; weighted_sum(t, y) })));
    v.push(("exp", [2, 3], false, Box::new(|t, x| { let y = t.exp(x)?; weighted_sum(t, y) })));
    v.push(("log", [2, 3], true, Box::new(|t, x| { let y = t.log(x)?; weighted_sum(t, y) })));
    v.push(("sqrt", [2, 3], true, Box::new(|t, x| { let y = t.sqrt(x)?; weighted_sum(t, y) })));
    v.push(("relu", [2, 3], false, Box::new(|t, x| { let y = t.relu(x)?; let y = t.mul(y, x)?; weighted_sum(t, y) })));
    v.push(("softmax-over-axis", [2, 3], false, Box::new(|t, x| { let y = t.softmax(x, 1)?; weighted_sum(t, y) })));
    v.push(("masked-softmax", [2, 3], false, Box::new(|t, x| {
        let mask: Arc<[bool]> = Arc::from(vec![true, false, true]);
        let y = t.masked_softmax(x, 1, mask)?;
        weighted_sum(t, y)
    })));
    v.push(("scale", [2, 3], false, Box::new(|t, x| { let y = t.scale(x, -2.5)?; let y = t.mul(y, x)?; weighted_sum(t, y) })));
    v.push(("broadcast", [1, 3], false, Box::new(|t, x| { let y = t.broadcast(x, &[4, 3])?; let y = t.mul(y, y)?; weighted_sum(t, y) })));
    v.push(("gather-rows", [3, 2], false, Box::new(|t, x| { let y = t.gather_rows(x, &[2, 0, 2, 1])?; let y = t.mul(y, y)?; weighted_sum(t, y) })));
    v
}

/// A random point for a probe; positive points stay in [0.5, 2].
pub fn probe_point(shape: [usize; 2], positive: bool, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape[0] * shape[1];
    let data = (0..n)
        .map(|_| {
            if positive {
                rng.gen_range(0.5..2.0)
            } else {
                // Keep clear of the relu kink.
                let v: f64 = rng.gen_range(0.05..2.0);
                if rng.gen() { v } else { -v }
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Finite-difference check of the full model's `logit₁ − logit₀` with
/// respect to one modality's input array (note embeddings for notes).
pub fn model_input_grad_error(model: &Model, r: &MultimodalRecord, modality: Modality) -> Result<f64> {
    let mut g0 = Graph::new(&model.params, Mode::Standard);
    let bound = model.bind_inputs(&mut g0, r, true)?;
    let events = g0.tape.value(bound.events.unwrap()).clone();
    let notes = g0.tape.value(bound.notes.as_ref().unwrap().0).clone();
    let mask = bound.notes.as_ref().unwrap().1.clone();
    let vitals = g0.tape.value(bound.vitals.unwrap()).clone();
    let point = match modality {
        Modality::Events => events.clone(),
        Modality::Notes => notes.clone(),
        Modality::Vitals => vitals.clone(),
    };
    let f = |tape: &mut Tape, x: Var| -> Result<Var> {
        let mut g = Graph::new(&model.params, Mode::Standard);
        g.swap_tape(tape);
        let mut leaf_or = |t: &Tensor, m: Modality| if m == modality { x } else { g.tape.constant(t.clone()) };
        let inputs = BoundInputs {
            events: Some(leaf_or(&events, Modality::Events)),
            notes: Some((leaf_or(&notes, Modality::Notes), mask.clone())),
            vitals: Some(leaf_or(&vitals, Modality::Vitals)),
        };
        let z = model.logits(&mut g, &inputs);
        let out = z.and_then(|z| {
            let d = g.tape.constant(Tensor::vector(vec![-1.0, 1.0]));
            let p = g.tape.mul(z, d)?;
            g.tape.sum_all(p)
        });
        g.swap_tape(tape);
        out
    };
    grad_check(f, &point, 1e-5)
}

/// Finite-difference check of parameter gradients at `coords` randomly
/// chosen coordinates, same relative error as `grad_check`. Key biases
/// must instead have a zero gradient.
pub fn model_param_grad_error(model: &Model, r: &MultimodalRecord, coords: usize, seed: u64) -> Result<f64> {
    let objective = |m: &Model| -> Result<f64> {
        let p = m.predict(r)?;
        Ok(p.logits[1] - p.logits[0])
    };
    let mut g = Graph::new(&model.params, Mode::Standard).with_trainable_params();
    let inputs = model.bind_inputs(&mut g, r, false)?;
    let z = model.logits(&mut g, &inputs)?;
    g.tape.backward_with_seed(z, Tensor::vector(vec![-1.0, 1.0]))?;
    let mut grads: Vec<(String, Tensor)> = g.bound_params().map(|(n, v)| (n.clone(), g.tape.grad_or_zeros(*v))).collect();
    grads.sort_by(|a, b| a.0.cmp(&b.0));
    // Softmax is shift invariant, so key biases have an exactly zero
    // gradient; relative error is meaningless there.
    let (key_bias, grads): (Vec<_>, Vec<_>) = grads.into_iter().partition(|(n, _)| n.ends_with(".attn.k.bias"));
    for (name, g) in &key_bias {
        if let Some(v) = g.data().iter().find(|v| v.abs() > 1e-12) {
            return Err(xmmp::Error::InvalidArgument(format!("{name} has gradient {v}")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..coords {
        let (name, grad) = &grads[rng.gen_range(0..grads.len())];
        let i = rng.gen_range(0..grad.numel());
        let mut plus = model.clone();
        plus.params.get_mut(name).unwrap().data_mut()[i] += step;
        let mut minus = model.clone();
        minus.params.get_mut(name).unwrap().data_mut()[i] -= step;
        let numeric = (objective(&plus)? - objective(&minus)?) / (2.0 * step);
        let analytic = grad.data()[i];
        let e = (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12);
        worst = worst.max(e);
    }
    Ok(worst)
}

/// Labels with both classes and scores drawn from a small pool (many ties)
/// or a continuum, n ∈ [2, 200].
pub fn metric_instance(seed: u64) -> (Vec<u8>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=200);
    let pool = rng.gen_range(1..=12);
    let discrete: bool = rng.gen();
    let rate: f64 = rng.gen_range(0.05..0.95);
    let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(rate))).collect();
    labels[0] = 1;
    labels[1] = 0;
    let scores = (0..n)
        .map(|_| if discrete { rng.gen_range(0..pool) as f64 / 4.0 } else { rng.gen::<f64>() })
        .collect();
    (labels, scores)
}

/// Pair-counting AUC-ROC: concordant pairs plus half the ties.
pub fn brute_auc_roc(labels: &[u8], scores: &[f64]) -> f64 {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for i in 0..labels.len() {
        for j in 0..labels.len() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1;
                twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    twice as f64 / (2 * pairs) as f64
}

/// Threshold-scan average precision: Σ (R_k − R_{k−1}) P_k over distinct
/// thresholds, highest first.
pub fn brute_auc_pr(labels: &[u8], scores: &[f64]) -> f64 {
    let pos = labels.iter().filter(|&&y| y == 1).count() as u64;
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut ap, mut prev_tp) = (0.0, 0u64);
    for t in thresholds {
        let tp = (0..labels.len()).filter(|&i| scores[i] >= t && labels[i] == 1).count() as u64;
        let fp = (0..labels.len()).filter(|&i| scores[i] >= t && labels[i] == 0).count() as u64;
        if tp > prev_tp {
            ap += ((tp - prev_tp) as f64 / pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
        prev_tp = tp;
    }
    ap
}

pub fn golden_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Hourly event grid against hand-derived cells.
pub fn check_events_golden() -> std::result::Result<(), String> {
    use xmmp::data::{events::read_events_csv, preprocess_events, NormalValueTable};
    let table = NormalValueTable::default();
    let rows = read_events_csv(golden_dir().join("events.csv")).map_err(|e| e.to_string())?;
    let grid = preprocess_events(&rows, &table, 24).map_err(|e| e.to_string())?;
    let columns = table.event_columns();
    let mut reader = csv::Reader::from_path(golden_dir().join("events.expected.csv")).map_err(|e| e.to_string())?;
    for row in reader.records() {
        let row = row.map_err(|e| e.to_string())?;
        let hour: usize = row[0].parse().unwrap();
        let col = columns.iter().position(|c| c == &row[1]).ok_or(format!("no column `{}`", &row[1]))?;
        let expected: f64 = row[2].parse().unwrap();
        let got = grid.values.get2(hour, col);
        if got != expected {
            return Err(format!("hour {hour} `{}`: expected {expected}, got {got}", &row[1]));
        }
    }
    Ok(())
}

/// Cleaned, truncated note words against the expected word lists.
pub fn check_notes_golden() -> std::result::Result<(), String> {
    use std::collections::BTreeMap;
    use xmmp::data::notes::{read_notes_jsonl, MAX_NOTE_WORDS};
    use xmmp::data::{note_words, NormalValueTable};
    let table = NormalValueTable::default();
    let notes = read_notes_jsonl(golden_dir().join("notes.jsonl")).map_err(|e| e.to_string())?;
    let text = std::fs::read_to_string(golden_dir().join("notes.expected.json")).map_err(|e| e.to_string())?;
    let expected: BTreeMap<u64, Vec<String>> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    for (stay, words) in expected {
        let mine: Vec<_> = notes.iter().filter(|n| n.stay_id == stay).cloned().collect();
        let got = note_words(&mine, &table.leak_words, 24.0, MAX_NOTE_WORDS);
        if got != words {
            return Err(format!("stay {stay}: {} words, expected {}", got.len(), words.len()));
        }
    }
    Ok(())
}

/// 1 Hz day resampled to 480 bins; a 60%-missing channel rejects the stay.
pub fn check_vitals_golden() -> std::result::Result<(), String> {
    use xmmp::data::vitals::{read_vitals_csv, VITAL_STEPS};
    use xmmp::data::{preprocess_vitals, NormalValueTable};
    let table = NormalValueTable::load(golden_dir().join("vitals_table.json")).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let write = |name: &str, keep: &dyn Fn(u64) -> bool| {
        let path = dir.path().join(name);
        let mut text = String::from("stay_id,channel,time,value\n");
        for s in (0..86_400u64).filter(|&s| keep(s)) {
            text.push_str(&format!("1,HR,{},{}\n", s as f64 / 3600.0, 60 + (s * 7) % 101));
        }
        std::fs::write(&path, text).map(|_| path)
    };
    let full = write("full.csv", &|_| true).map_err(|e| e.to_string())?;
    let rows = read_vitals_csv(&full).map_err(|e| e.to_string())?;
    let grid = preprocess_vitals(1, &rows, &table, VITAL_STEPS).map_err(|e| e.to_string())?;
    let mut reader = csv::Reader::from_path(golden_dir().join("vitals.expected.csv")).map_err(|e| e.to_string())?;
    let expected: Vec<f64> = reader.records().map(|r| r.unwrap()[1].parse().unwrap()).collect();
    if grid.values.shape() != [480, 1] || grid.values.data() != expected.as_slice() {
        return Err(format!("1 Hz day gave shape {:?} or wrong bin values", grid.values.shape()));
    }
    let sparse = write("sparse.csv", &|s| s >= 86_400 * 6 / 10).map_err(|e| e.to_string())?;
    let rows = read_vitals_csv(&sparse).map_err(|e| e.to_string())?;
    match preprocess_vitals(1, &rows, &table, VITAL_STEPS) {
        Err(xmmp::Error::Rejected { .. }) => Ok(()),
        other => Err(format!("60% missing channel was not rejected: {other:?}")),
    }
}
