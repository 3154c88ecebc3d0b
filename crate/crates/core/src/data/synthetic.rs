//! Synthetic multimodal cohorts with planted, known-salient features.
//!
//! Background values are roughly standard normal. A positive stay carries
//! up to three signals: the planted event feature above its threshold for
//! at least three hours, the planted token one to three times in its note,
//! and a short spike in the planted vitals channel. Negative stays never
//! reach the signal ranges.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, DatasetMeta};
use super::record::{EventSequence, MultimodalRecord, NoteTokens, VitalSigns};
use super::table::{EventFeature, NormalValueTable};
use super::vocab::Vocabulary;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::Modality;
use crate::seed::rng_for;

const BACKGROUND_WORDS: [&str; 40] = [
    "patient", "stable", "overnight", "family", "bedside", "alert", "oriented", "pain", "denies", "chest",
    "abdomen", "soft", "lungs", "clear", "bilateral", "edema", "urine", "output", "adequate", "tolerating",
    "diet", "ambulating", "assist", "wound", "dressing", "changed", "fever", "afebrile", "sedated", "weaning",
    "vent", "extubated", "nasal", "cannula", "lasix", "heparin", "insulin", "drip", "monitor", "plan",
];

/// How planted signals are distributed over positive stays.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Planting {
    /// Every positive carries all three signals.
    AllThree,
    /// Every positive carries exactly one signal, cycling through the
    /// modalities so each appears in a third of positives.
    Complementary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub records: usize,
    /// Fraction of stays that receive planted signals.
    pub positive_rate: f64,
    /// Fraction of planted stays relabelled negative; the same number of
    /// unplanted stays is relabelled positive, so prevalence is unchanged.
    pub label_noise: f64,
    pub hours: usize,
    pub note_words_min: usize,
    pub note_words_max: usize,
    pub vital_steps: usize,
    pub vital_channels: usize,
    pub event_feature: String,
    /// Planted values exceed this; background stays at least one unit below.
    pub event_threshold: f64,
    pub token: String,
    pub vital_channel: usize,
    pub spike_amplitude: f64,
    pub planting: Planting,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            records: 2000,
            positive_rate: 0.1,
            label_noise: 0.05,
            hours: 24,
            note_words_min: 12,
            note_words_max: 28,
            vital_steps: 24,
            vital_channels: 6,
            event_feature: "Glucose".into(),
            event_threshold: 2.0,
            token: "arrest".into(),
            vital_channel: 0,
            spike_amplitude: 4.0,
            planting: Planting::AllThree,
        }
    }
}

/// One planted cell: events index = hour·D + column, notes index = token
/// position (including `[CLS]` at 0), vitals index = step·N + channel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedCell {
    pub stay_id: u64,
    pub modality: Modality,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SyntheticSpec,
    pub seed: u64,
    pub event_feature: String,
    pub event_column: usize,
    pub token: String,
    pub token_id: u32,
    pub vital_channel: String,
    pub planted: Vec<PlantedCell>,
}

impl GroundTruth {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Planted cells of one stay.
    pub fn cells_of(&self, stay_id: u64) -> impl Iterator<Item = &PlantedCell> {
        self.planted.iter().filter(move |c| c.stay_id == stay_id)
    }
}

impl SyntheticSpec {
    pub fn validate(&self, table: &NormalValueTable) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("infeasible synthetic spec: {m}")));
        if self.records == 0 {
            return bad("no records requested".into());
        }
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return bad(format!("positive rate {} must lie in (0, 1) for signals to be planted", self.positive_rate));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return bad(format!("label noise {} must lie in [0, 0.5)", self.label_noise));
        }
        if self.hours < 3 {
            return bad(format!("{} hours cannot hold a three-hour event signal", self.hours));
        }
        if self.note_words_min == 0 || self.note_words_min > self.note_words_max {
            return bad(format!("note length range {}..={}", self.note_words_min, self.note_words_max));
        }
        if self.vital_steps < 3 || self.vital_channels == 0 || self.vital_channels > table.vitals.len() {
            return bad(format!("vitals grid {}×{}", self.vital_steps, self.vital_channels));
        }
        if self.vital_channel >= self.vital_channels {
            return bad(format!("vital channel {} outside {} channels", self.vital_channel, self.vital_channels));
        }
        if self.spike_amplitude <= 2.0 {
            return bad(format!("spike amplitude {} does not clear the background", self.spike_amplitude));
        }
        match table.event_feature(&self.event_feature) {
            Some((_, EventFeature::Continuous { .. })) => {}
            _ => return bad(format!("`{}` is not a continuous event feature", self.event_feature)),
        }
        if BACKGROUND_WORDS.contains(&self.token.as_str()) || self.token.is_empty() {
            return bad(format!("planted token `{}` collides with background vocabulary", self.token));
        }
        Ok(())
    }
}

struct Planted {
    events: bool,
    notes: bool,
    vitals: bool,
}

/// Generates a cohort and its ground truth. Stay ids are `1..=records`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<(Dataset, GroundTruth)> {
    let table = NormalValueTable::default();
    spec.validate(&table)?;
    let mut rng = rng_for(seed, "synthetic");
    let n = spec.records;

    let planted_any: Vec<bool> = (0..n).map(|_| rng.gen_bool(spec.positive_rate)).collect();
    let mut labels: Vec<u8> = planted_any.iter().map(|&p| p as u8).collect();
    let mut dropped = 0;
    for (i, &p) in planted_any.iter().enumerate() {
        if p && rng.gen_bool(spec.label_noise) {
            labels[i] = 0;
            dropped += 1;
        }
    }
    let mut clean: Vec<usize> = (0..n).filter(|&i| !planted_any[i]).collect();
    clean.shuffle(&mut rng);
    for &i in clean.iter().take(dropped) {
        labels[i] = 1;
    }

    let event_column = table.event_columns().iter().position(|c| *c == spec.event_feature).expect("validated");
    let mut planted = Vec::new();
    let mut records = Vec::with_capacity(n);
    let mut documents = Vec::with_capacity(n);
    let mut kind_cursor = 0;
    for i in 0..n {
        let stay_id = i as u64 + 1;
        let signals = match (planted_any[i], spec.planting) {
            (false, _) => Planted { events: false, notes: false, vitals: false },
            (true, Planting::AllThree) => Planted { events: true, notes: true, vitals: true },
            (true, Planting::Complementary) => {
                kind_cursor += 1;
                let k = kind_cursor % 3;
                Planted { events: k == 0, notes: k == 1, vitals: k == 2 }
            }
        };
        let (events, cells) = synth_events(spec, &table, event_column, signals.events, &mut rng)?;
        planted.extend(cells.into_iter().map(|index| PlantedCell { stay_id, modality: Modality::Events, index }));
        let (words, positions) = synth_words(spec, signals.notes, &mut rng);
        planted.extend(positions.into_iter().map(|index| PlantedCell { stay_id, modality: Modality::Notes, index }));
        documents.push(words);
        let (vitals, cells) = synth_vitals(spec, signals.vitals, &mut rng)?;
        planted.extend(cells.into_iter().map(|index| PlantedCell { stay_id, modality: Modality::Vitals, index }));
        records.push((stay_id, events, vitals, labels[i]));
    }

    let vocabulary = Vocabulary::build(documents.iter().map(Vec::as_slice), 1);
    let token_id = vocabulary.lookup(&spec.token).unwrap_or(crate::data::vocab::UNK_ID);
    let records = records
        .into_iter()
        .zip(&documents)
        .map(|((stay_id, events, vitals, label), words)| {
            Ok(MultimodalRecord { stay_id, events, notes: NoteTokens::new(vocabulary.encode(words))?, vitals, label })
        })
        .collect::<Result<Vec<_>>>()?;

    let vital_names: Vec<String> = table.vital_names().into_iter().take(spec.vital_channels).collect();
    let truth = GroundTruth {
        spec: spec.clone(),
        seed,
        event_feature: spec.event_feature.clone(),
        event_column,
        token: spec.token.clone(),
        token_id,
        vital_channel: vital_names[spec.vital_channel].clone(),
        planted,
    };
    let meta = DatasetMeta {
        event_columns: table.event_columns(),
        event_continuous: table.event_continuous(),
        vital_channels: vital_names,
        vocabulary,
        stats: None,
    };
    Ok((Dataset::new(meta, records), truth))
}

fn synth_events(
    spec: &SyntheticSpec,
    table: &NormalValueTable,
    planted_column: usize,
    plant: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(EventSequence, Vec<usize>)> {
    let width = table.event_width();
    let value_width = table.value_width();
    let offsets = table.column_offsets();
    let noise = Normal::new(0.0, 0.7).expect("valid");
    let level = Normal::new(0.0, 0.5).expect("valid");
    let mut data = vec![0.0; spec.hours * width];
    for (fi, feature) in table.events.iter().enumerate() {
        let col = offsets[fi];
        match feature {
            EventFeature::Continuous { .. } => {
                let base = level.sample(rng);
                for h in 0..spec.hours {
                    let mut v: f64 = base + noise.sample(rng);
                    if col == planted_column {
                        v = v.min(spec.event_threshold - 1.0);
                    }
                    data[h * width + col] = v;
                }
            }
            EventFeature::Categorical { categories, normal, .. } => {
                let k = if rng.gen_bool(0.8) {
                    categories.iter().position(|c| c == normal).unwrap_or(0)
                } else {
                    rng.gen_range(0..categories.len())
                };
                for h in 0..spec.hours {
                    data[h * width + col + k] = 1.0;
                }
            }
        }
        for h in 0..spec.hours {
            data[h * width + value_width + fi] = rng.gen_bool(0.3) as u8 as f64;
        }
    }
    let mut cells = Vec::new();
    if plant {
        let count = rng.gen_range(3..=5.min(spec.hours));
        let mut hours: Vec<usize> = (0..spec.hours).collect();
        hours.shuffle(rng);
        let mut hours = hours[..count].to_vec();
        hours.sort_unstable();
        let (fi, _) = table.event_feature(&spec.event_feature).expect("validated");
        for h in hours {
            data[h * width + planted_column] = spec.event_threshold + rng.gen_range(0.5..1.5);
            data[h * width + value_width + fi] = 1.0;
            cells.push(h * width + planted_column);
        }
    }
    Ok((EventSequence::new(Tensor::new(vec![spec.hours, width], data)?)?, cells))
}

/// Words of one note and the `[CLS]`-offset positions of the planted token.
fn synth_words(spec: &SyntheticSpec, plant: bool, rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<usize>) {
    let len = rng.gen_range(spec.note_words_min..=spec.note_words_max);
    let mut words: Vec<String> =
        (0..len).map(|_| BACKGROUND_WORDS[rng.gen_range(0..BACKGROUND_WORDS.len())].to_string()).collect();
    let mut positions = Vec::new();
    if plant {
        let copies = rng.gen_range(1..=3.min(len));
        let mut slots: Vec<usize> = (0..len).collect();
        slots.shuffle(rng);
        for &p in &slots[..copies] {
            words[p] = spec.token.clone();
            positions.push(p + 1);
        }
        positions.sort_unstable();
    }
    (words, positions)
}

fn synth_vitals(spec: &SyntheticSpec, plant: bool, rng: &mut ChaCha8Rng) -> Result<(VitalSigns, Vec<usize>)> {
    let (m, c) = (spec.vital_steps, spec.vital_channels);
    let innovation = Normal::new(0.0, 0.6).expect("valid");
    let mut data = vec![0.0; m * c];
    for ch in 0..c {
        let mut x: f64 = Normal::new(0.0, 1.0).expect("valid").sample(rng);
        for t in 0..m {
            x = 0.8 * x + innovation.sample(rng);
            data[t * c + ch] = if ch == spec.vital_channel { x.min(1.5) } else { x };
        }
    }
    let mut cells = Vec::new();
    if plant {
        let start = rng.gen_range(0..=m - 3);
        for t in start..start + 3 {
            data[t * c + spec.vital_channel] = spec.spike_amplitude + rng.gen_range(-0.3..0.3);
            cells.push(t * c + spec.vital_channel);
        }
    }
    Ok((VitalSigns::new(Tensor::new(vec![m, c], data)?)?, cells))
}
