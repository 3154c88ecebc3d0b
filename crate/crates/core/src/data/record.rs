use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::vocab::CLS_ID;
use crate::error::{Error, Result};

/// Hourly event grid, (L hours × D columns). The trailing columns of a
/// preprocessed grid are missingness indicators (1 = observed that hour).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSequence {
    pub values: Tensor,
}

impl EventSequence {
    pub fn new(values: Tensor) -> Result<Self> {
        values.dims2()?;
        Ok(Self { values })
    }

    pub fn hours(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }
}

/// Note token ids; position 0 is always `[CLS]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteTokens {
    pub ids: Vec<u32>,
}

impl NoteTokens {
    pub fn new(ids: Vec<u32>) -> Result<Self> {
        if ids.first() != Some(&CLS_ID) {
            return Err(Error::Data("note sequence must start with [CLS]".into()));
        }
        Ok(Self { ids })
    }

    /// A sequence holding only `[CLS]`.
    pub fn cls_only() -> Self {
        Self { ids: vec![CLS_ID] }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Bedside-monitor grid, (M timesteps × N channels).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VitalSigns {
    pub values: Tensor,
}

impl VitalSigns {
    pub fn new(values: Tensor) -> Result<Self> {
        values.dims2()?;
        if !values.is_finite() {
            return Err(Error::Data("vital signs contain non-finite values".into()));
        }
        Ok(Self { values })
    }

    pub fn steps(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[1]
    }
}

/// One ICU stay with all three modalities and the mortality label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultimodalRecord {
    pub stay_id: u64,
    pub events: EventSequence,
    pub notes: NoteTokens,
    pub vitals: VitalSigns,
    pub label: u8,
}
