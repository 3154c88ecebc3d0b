use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::Modality;

/// Explanation method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExplainerKind {
    Random,
    AttentionLast,
    AttentionRollout,
    IntegratedGradients,
    LrpEpsilon,
    Lrptrans,
}

impl ExplainerKind {
    pub const ALL: [ExplainerKind; 6] = [
        Self::Random,
        Self::AttentionLast,
        Self::AttentionRollout,
        Self::IntegratedGradients,
        Self::LrpEpsilon,
        Self::Lrptrans,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::AttentionLast => "attention-last",
            Self::AttentionRollout => "attention-rollout",
            Self::IntegratedGradients => "integrated-gradients",
            Self::LrpEpsilon => "lrp-epsilon",
            Self::Lrptrans => "lrptrans",
        }
    }
}

impl std::fmt::Display for ExplainerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ExplainerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown explainer `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModalitySums {
    pub events: f64,
    pub notes: f64,
    pub vitals: f64,
}

impl ModalitySums {
    pub fn total(&self) -> f64 {
        self.events + self.notes + self.vitals
    }

    pub fn get(&self, m: Modality) -> f64 {
        match m {
            Modality::Events => self.events,
            Modality::Notes => self.notes,
            Modality::Vitals => self.vitals,
        }
    }
}

/// Per-element relevance of one record's inputs for one class logit.
/// Modalities the model does not use carry all-zero relevance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub stay_id: u64,
    pub explainer: ExplainerKind,
    pub target_class: usize,
    /// The explained class logit.
    pub target_value: f64,
    /// (L × D), aligned with the event grid.
    pub events: Tensor,
    /// One value per token position, `[CLS]` included.
    pub tokens: Vec<f64>,
    pub token_ids: Vec<u32>,
    /// (M × N), aligned with the vitals grid.
    pub vitals: Tensor,
    pub sums: ModalitySums,
    /// `target_value − sums.total()`.
    pub residual: f64,
}

impl AttributionReport {
    pub fn new(
        stay_id: u64,
        explainer: ExplainerKind,
        target_class: usize,
        target_value: f64,
        events: Tensor,
        tokens: Vec<f64>,
        token_ids: Vec<u32>,
        vitals: Tensor,
    ) -> Result<Self> {
        if tokens.len() != token_ids.len() {
            return Err(Error::Shape(format!("{} token scores for {} tokens", tokens.len(), token_ids.len())));
        }
        let all_finite = events.is_finite() && vitals.is_finite() && tokens.iter().all(|v| v.is_finite());
        if !all_finite || !target_value.is_finite() {
            return Err(Error::NonFinite(format!("{explainer} attribution for stay {stay_id}")));
        }
        let sums = ModalitySums { events: events.sum(), notes: tokens.iter().sum(), vitals: vitals.sum() };
        Ok(Self {
            stay_id,
            explainer,
            target_class,
            target_value,
            events,
            tokens,
            token_ids,
            vitals,
            residual: target_value - sums.total(),
            sums,
        })
    }

    /// Target value minus the summed relevance of every input element.
    pub fn conservation_residual(&self) -> f64 {
        self.target_value - (self.events.sum() + self.tokens.iter().sum::<f64>() + self.vitals.sum())
    }

    pub fn relevance(&self, m: Modality) -> &[f64] {
        match m {
            Modality::Events => self.events.data(),
            Modality::Notes => &self.tokens,
            Modality::Vitals => self.vitals.data(),
        }
    }

    /// Long-format rows: (modality, feature id, time index, attribution).
    /// Events: feature = column, time = hour. Notes: feature = token id,
    /// time = position. Vitals: feature = channel, time = step.
    pub fn rows(&self) -> Vec<CsvRow> {
        let mut out = Vec::new();
        for (modality, grid) in [(Modality::Events, &self.events), (Modality::Vitals, &self.vitals)] {
            let (steps, width) = (grid.shape()[0], grid.shape()[1]);
            for t in 0..steps {
                for f in 0..width {
                    out.push(CsvRow { stay_id: self.stay_id, modality, feature: f as u64, time: t, attribution: grid.get2(t, f) });
                }
            }
        }
        for (t, (&id, &a)) in self.token_ids.iter().zip(&self.tokens).enumerate() {
            out.push(CsvRow { stay_id: self.stay_id, modality: Modality::Notes, feature: id as u64, time: t, attribution: a });
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub stay_id: u64,
    pub modality: Modality,
    pub feature: u64,
    pub time: usize,
    pub attribution: f64,
}

pub fn write_reports_json(reports: &[AttributionReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, serde_json::to_vec(reports)?).map_err(|e| Error::io(path, e))
}

pub fn read_reports_json(path: impl AsRef<Path>) -> Result<Vec<AttributionReport>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn write_reports_csv(reports: &[AttributionReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        for row in r.rows() {
            w.serialize(row)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
