//! Hourly resampling of charted events into a fixed (hours × columns) grid.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::record::EventSequence;
use super::table::{EventFeature, NormalValueTable};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// One charted observation. `time` is hours since ICU admission.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawEventRow {
    pub stay_id: u64,
    pub time: f64,
    pub feature: String,
    pub value: String,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Cell {
    Continuous(f64),
    Category(usize),
}

fn parse_value(feature: &EventFeature, raw: &str) -> Result<Cell> {
    let raw = raw.trim();
    let bad = || Error::Data(format!("unparseable value `{raw}` for `{}`", feature.name()));
    match feature {
        EventFeature::Continuous { .. } => raw.parse::<f64>().ok().filter(|v| v.is_finite()).map(Cell::Continuous).ok_or_else(bad),
        EventFeature::Categorical { categories, .. } => {
            if let Some(i) = categories.iter().position(|c| c == raw) {
                return Ok(Cell::Category(i));
            }
            // Numeric levels may be charted as "15" or "15.0".
            let v: f64 = raw.parse().map_err(|_| bad())?;
            let spellings = [format!("{}", v as i64), format!("{v:.1}")];
            categories
                .iter()
                .position(|c| spellings.contains(c))
                .map(Cell::Category)
                .ok_or_else(bad)
        }
    }
}

fn normal_cell(feature: &EventFeature) -> Cell {
    match feature {
        EventFeature::Continuous { normal, .. } => Cell::Continuous(*normal),
        EventFeature::Categorical { categories, normal, .. } => {
            Cell::Category(categories.iter().position(|c| c == normal).unwrap_or(0))
        }
    }
}

/// Builds the un-normalised grid for one stay.
///
/// Rows outside `[0, hours)` are dropped. Within an hour the latest
/// observation wins; later hours without data repeat the last value, and
/// hours before the first observation take the feature's normal value.
/// Mask columns are 1 exactly where that hour had an observation.
pub fn preprocess_events(rows: &[RawEventRow], table: &NormalValueTable, hours: usize) -> Result<EventSequence> {
    let nf = table.events.len();
    // latest[(hour, feature)] = (time, input order, cell)
    let mut latest: Vec<Option<(f64, usize, Cell)>> = vec![None; hours * nf];
    for (order, row) in rows.iter().enumerate() {
        let (fi, feature) = table
            .event_feature(&row.feature)
            .ok_or_else(|| Error::Data(format!("unknown event feature `{}`", row.feature)))?;
        let cell = parse_value(feature, &row.value)?;
        if !(row.time >= 0.0 && row.time < hours as f64) {
            continue;
        }
        let slot = &mut latest[row.time.floor() as usize * nf + fi];
        let newer = slot.is_none_or(|(t, o, _)| (row.time, order) >= (t, o));
        if newer {
            *slot = Some((row.time, order, cell));
        }
    }

    let width = table.event_width();
    let offsets = table.column_offsets();
    let value_width = table.value_width();
    let mut data = vec![0.0; hours * width];
    for (fi, feature) in table.events.iter().enumerate() {
        let mut carried = normal_cell(feature);
        for h in 0..hours {
            let observed = latest[h * nf + fi].map(|(_, _, c)| c);
            if let Some(c) = observed {
                carried = c;
            }
            let row = &mut data[h * width..(h + 1) * width];
            match carried {
                Cell::Continuous(v) => row[offsets[fi]] = v,
                Cell::Category(k) => row[offsets[fi] + k] = 1.0,
            }
            row[value_width + fi] = if observed.is_some() { 1.0 } else { 0.0 };
        }
    }
    EventSequence::new(Tensor::new(vec![hours, width], data)?)
}

/// Inverse view of an un-normalised grid: one row per observed cell, at
/// the start of its hour.
pub fn grid_to_rows(stay_id: u64, grid: &EventSequence, table: &NormalValueTable) -> Vec<RawEventRow> {
    let offsets = table.column_offsets();
    let value_width = table.value_width();
    let mut rows = Vec::new();
    for h in 0..grid.hours() {
        let row = grid.values.row(h);
        for (fi, feature) in table.events.iter().enumerate() {
            if row[value_width + fi] != 1.0 {
                continue;
            }
            let value = match feature {
                EventFeature::Continuous { .. } => format!("{}", row[offsets[fi]]),
                EventFeature::Categorical { categories, .. } => {
                    let k = (0..categories.len()).find(|&k| row[offsets[fi] + k] == 1.0).unwrap_or(0);
                    categories[k].clone()
                }
            };
            rows.push(RawEventRow { stay_id, time: h as f64, feature: feature.name().to_string(), value });
        }
    }
    rows
}

/// Reads `stay_id,time,feature,value` rows.
pub fn read_events_csv(path: impl AsRef<Path>) -> Result<Vec<RawEventRow>> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}
