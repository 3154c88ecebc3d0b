//! Joining the per-modality exports into multimodal records.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Deserialize;

use super::dataset::{Dataset, DatasetMeta};
use super::events::{preprocess_events, RawEventRow};
use super::notes::{note_words, RawNote, MAX_NOTE_WORDS};
use super::record::{EventSequence, MultimodalRecord, NoteTokens, VitalSigns};
use super::table::NormalValueTable;
use super::vitals::{preprocess_vitals, RawVitalRow, VITAL_STEPS};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

/// Hours of events and notes kept per stay.
pub const WINDOW_HOURS: usize = 24;
/// Minimum corpus count for a word to enter the vocabulary.
pub const MIN_WORD_FREQ: usize = 2;

fn keyed<T>(items: Vec<(u64, T)>, modality: &str) -> Result<BTreeMap<u64, T>> {
    let mut map = BTreeMap::new();
    for (id, item) in items {
        if map.insert(id, item).is_some() {
            return Err(Error::Data(format!("duplicate stay id {id} in {modality}")));
        }
    }
    Ok(map)
}

/// Inner join on stay id, in ascending id order. Ids missing from any
/// modality are logged and dropped.
pub fn match_modalities<E, N, V>(
    events: Vec<(u64, E)>,
    notes: Vec<(u64, N)>,
    vitals: Vec<(u64, V)>,
) -> Result<Vec<(u64, E, N, V)>> {
    let mut events = keyed(events, "events")?;
    let mut notes = keyed(notes, "notes")?;
    let mut vitals = keyed(vitals, "vitals")?;
    let all: BTreeSet<u64> = events.keys().chain(notes.keys()).chain(vitals.keys()).copied().collect();
    let mut out = Vec::new();
    let mut unmatched = Vec::new();
    for id in all {
        match (events.remove(&id), notes.remove(&id), vitals.remove(&id)) {
            (Some(e), Some(n), Some(v)) => out.push((id, e, n, v)),
            _ => unmatched.push(id),
        }
    }
    if !unmatched.is_empty() {
        log::info!("{} stay ids lack at least one modality: {:?}", unmatched.len(), unmatched);
    }
    if out.is_empty() {
        log::warn!("no stay id is present in all three modalities");
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct LabelRow {
    stay_id: u64,
    label: u8,
}

/// Reads `stay_id,label` rows (label 1 = in-hospital death).
pub fn read_labels_csv(path: impl AsRef<Path>) -> Result<BTreeMap<u64, u8>> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let mut labels = BTreeMap::new();
    for row in reader.deserialize() {
        let row: LabelRow = row?;
        if row.label > 1 {
            return Err(Error::Data(format!("stay {}: label must be 0 or 1, got {}", row.stay_id, row.label)));
        }
        if labels.insert(row.stay_id, row.label).is_some() {
            return Err(Error::Data(format!("duplicate stay id {} in labels", row.stay_id)));
        }
    }
    Ok(labels)
}

fn group<T>(rows: Vec<T>, id: impl Fn(&T) -> u64) -> BTreeMap<u64, Vec<T>> {
    let mut map: BTreeMap<u64, Vec<T>> = BTreeMap::new();
    for r in rows {
        map.entry(id(&r)).or_default().push(r);
    }
    map
}

/// Full preprocessing of raw exports into an un-normalised dataset.
///
/// Stays whose vitals are rejected are skipped with a warning; any other
/// preprocessing failure aborts. The vocabulary is built from the matched
/// stays' words.
pub fn build_dataset(
    events: Vec<RawEventRow>,
    notes: Vec<RawNote>,
    vitals: Vec<RawVitalRow>,
    labels: &BTreeMap<u64, u8>,
    table: &NormalValueTable,
) -> Result<Dataset> {
    let mut event_grids: Vec<(u64, EventSequence)> = Vec::new();
    for (id, rows) in group(events, |r| r.stay_id) {
        event_grids.push((id, preprocess_events(&rows, table, WINDOW_HOURS)?));
    }
    let note_sets: Vec<(u64, Vec<String>)> = group(notes, |n| n.stay_id)
        .into_iter()
        .map(|(id, n)| (id, note_words(&n, &table.leak_words, WINDOW_HOURS as f64, MAX_NOTE_WORDS)))
        .collect();
    let mut vital_grids: Vec<(u64, VitalSigns)> = Vec::new();
    for (id, rows) in group(vitals, |r| r.stay_id) {
        match preprocess_vitals(id, &rows, table, VITAL_STEPS) {
            Ok(v) => vital_grids.push((id, v)),
            Err(Error::Rejected { stay_id, reason }) => log::warn!("stay {stay_id} discarded: {reason}"),
            Err(e) => return Err(e),
        }
    }

    let mut matched = match_modalities(event_grids, note_sets, vital_grids)?;
    matched.retain(|(id, ..)| {
        let known = labels.contains_key(id);
        if !known {
            log::info!("stay {id} has no label and is dropped");
        }
        known
    });
    let vocabulary = Vocabulary::build(matched.iter().map(|(_, _, w, _)| w.as_slice()), MIN_WORD_FREQ);
    let mut records = Vec::with_capacity(matched.len());
    for (stay_id, events, words, vitals) in matched {
        if words.is_empty() {
            log::warn!("stay {stay_id} has no usable note text; using [CLS] only");
        }
        records.push(MultimodalRecord {
            stay_id,
            events,
            notes: NoteTokens::new(vocabulary.encode(&words))?,
            vitals,
            label: labels[&stay_id],
        });
    }
    let meta = DatasetMeta {
        event_columns: table.event_columns(),
        event_continuous: table.event_continuous(),
        vital_channels: table.vital_names(),
        vocabulary,
        stats: None,
    };
    Ok(Dataset::new(meta, records))
}
