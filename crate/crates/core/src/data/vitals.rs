//! Bedside-monitor resampling into fixed three-minute bins.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::record::VitalSigns;
use super::table::NormalValueTable;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Bins per stay: 24 hours of three-minute bins.
pub const VITAL_STEPS: usize = 480;
/// Bin width in hours.
pub const BIN_HOURS: f64 = 0.05;

/// One monitor sample. `time` is hours since ICU admission.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawVitalRow {
    pub stay_id: u64,
    pub channel: String,
    pub time: f64,
    pub value: f64,
}

fn bin_of(time: f64) -> usize {
    // Tolerate float noise at exact bin edges (e.g. 0.15 / 0.05).
    (time / BIN_HOURS + 1e-9).floor() as usize
}

/// Builds the un-normalised (steps × channels) grid for one stay.
///
/// Each bin takes its channel's last sample; empty bins are forward
/// filled, leading gaps take the channel's normal value. A channel present
/// in the table but empty in more than half the bins causes the record to
/// be rejected with [`Error::Rejected`].
pub fn preprocess_vitals(stay_id: u64, rows: &[RawVitalRow], table: &NormalValueTable, steps: usize) -> Result<VitalSigns> {
    let nc = table.vitals.len();
    let mut last: Vec<Option<(f64, usize, f64)>> = vec![None; steps * nc];
    for (order, row) in rows.iter().enumerate() {
        let c = table
            .vital_channel(&row.channel)
            .ok_or_else(|| Error::Data(format!("unknown vital channel `{}`", row.channel)))?;
        if !row.value.is_finite() {
            continue;
        }
        if !(row.time >= 0.0) {
            continue;
        }
        let b = bin_of(row.time);
        if b >= steps {
            continue;
        }
        let slot = &mut last[b * nc + c];
        if slot.is_none_or(|(t, o, _)| (row.time, order) >= (t, o)) {
            *slot = Some((row.time, order, row.value));
        }
    }

    let mut data = vec![0.0; steps * nc];
    for (c, channel) in table.vitals.iter().enumerate() {
        let observed = (0..steps).filter(|&b| last[b * nc + c].is_some()).count();
        if 2 * (steps - observed) > steps {
            let pct = 100.0 * (steps - observed) as f64 / steps as f64;
            return Err(Error::Rejected { stay_id, reason: format!("channel `{}` is {pct:.0}% missing", channel.name) });
        }
        let mut carried = channel.normal;
        for b in 0..steps {
            if let Some((_, _, v)) = last[b * nc + c] {
                carried = v;
            }
            data[b * nc + c] = carried;
        }
    }
    VitalSigns::new(Tensor::new(vec![steps, nc], data)?)
}

/// Reads `stay_id,channel,time,value` rows; empty values are skipped.
pub fn read_vitals_csv(path: impl AsRef<Path>) -> Result<Vec<RawVitalRow>> {
    #[derive(Deserialize)]
    struct Row {
        stay_id: u64,
        channel: String,
        time: f64,
        value: Option<f64>,
    }
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let mut rows = Vec::new();
    for r in reader.deserialize() {
        let r: Row = r?;
        if let Some(value) = r.value {
            rows.push(RawVitalRow { stay_id: r.stay_id, channel: r.channel, time: r.time, value });
        }
    }
    Ok(rows)
}
