use serde::{Deserialize, Serialize};

use super::record::MultimodalRecord;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Per-column mean and standard deviation; columns with `normalize ==
/// false` pass through unchanged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub normalize: Vec<bool>,
}

impl ColumnStats {
    /// Population statistics over every row of every grid.
    pub fn fit<'a>(grids: impl IntoIterator<Item = &'a Tensor>, normalize: Vec<bool>) -> Result<Self> {
        let cols = normalize.len();
        let mut sum = vec![0.0; cols];
        let mut sq = vec![0.0; cols];
        let mut n = 0usize;
        let grids: Vec<&Tensor> = grids.into_iter().collect();
        for g in &grids {
            let (rows, c) = g.dims2()?;
            if c != cols {
                return Err(Error::Shape(format!("grid has {c} columns, statistics expect {cols}")));
            }
            for r in 0..rows {
                for (j, v) in g.row(r).iter().enumerate() {
                    sum[j] += v;
                }
            }
            n += rows;
        }
        if n == 0 {
            return Err(Error::Data("cannot fit normalisation statistics on no data".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        for g in &grids {
            for r in 0..g.shape()[0] {
                for (j, v) in g.row(r).iter().enumerate() {
                    sq[j] += (v - mean[j]).powi(2);
                }
            }
        }
        let std = sq.iter().map(|s| (s / n as f64).sqrt()).collect();
        Ok(Self { mean, std, normalize })
    }

    /// z-scores; a zero-variance column maps to zeros.
    pub fn apply(&self, grid: &Tensor) -> Result<Tensor> {
        let (rows, cols) = grid.dims2()?;
        if cols != self.mean.len() {
            return Err(Error::Shape(format!("grid has {cols} columns, statistics expect {}", self.mean.len())));
        }
        let mut out = grid.clone();
        let data = out.data_mut();
        for r in 0..rows {
            for j in 0..cols {
                if !self.normalize[j] {
                    continue;
                }
                let v = &mut data[r * cols + j];
                *v = if self.std[j] > 0.0 { (*v - self.mean[j]) / self.std[j] } else { 0.0 };
            }
        }
        Ok(out)
    }
}

/// Training-split statistics for the two numeric modalities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub events: ColumnStats,
    pub vitals: ColumnStats,
}

impl NormStats {
    pub fn fit(train: &[&MultimodalRecord], event_continuous: &[bool]) -> Result<Self> {
        let vitals_cols = train.first().map_or(0, |r| r.vitals.channels());
        Ok(Self {
            events: ColumnStats::fit(train.iter().map(|r| &r.events.values), event_continuous.to_vec())?,
            vitals: ColumnStats::fit(train.iter().map(|r| &r.vitals.values), vec![true; vitals_cols])?,
        })
    }

    pub fn apply(&self, r: &MultimodalRecord) -> Result<MultimodalRecord> {
        let mut out = r.clone();
        out.events.values = self.events.apply(&r.events.values)?;
        out.vitals.values = self.vitals.apply(&r.vitals.values)?;
        Ok(out)
    }
}
