use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::record::MultimodalRecord;
use super::stats::NormStats;
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

/// Everything needed to interpret a record's arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub event_columns: Vec<String>,
    /// Per event column: z-normalised (`true`) or passed through.
    pub event_continuous: Vec<bool>,
    pub vital_channels: Vec<String>,
    pub vocabulary: Vocabulary,
    /// Statistics the arrays were normalised with, once a training split
    /// has been fixed.
    pub stats: Option<NormStats>,
}

impl DatasetMeta {
    /// Feature name behind an event column: `mask:x` and `x=cat` both map to `x`.
    pub fn event_feature_of(&self, column: usize) -> &str {
        let c = &self.event_columns[column];
        let c = c.strip_prefix("mask:").unwrap_or(c);
        c.split_once('=').map_or(c, |(f, _)| f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub format: String,
    pub meta: DatasetMeta,
    pub records: Vec<MultimodalRecord>,
}

pub const DATASET_FORMAT: &str = "xmmp-dataset/1";

impl Dataset {
    pub fn new(meta: DatasetMeta, records: Vec<MultimodalRecord>) -> Self {
        Self { format: DATASET_FORMAT.to_string(), meta, records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn positives(&self) -> usize {
        self.records.iter().filter(|r| r.label == 1).count()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_vec(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ds: Self = serde_json::from_slice(&bytes)?;
        if ds.format != DATASET_FORMAT {
            return Err(Error::Data(format!("{}: unsupported dataset format `{}`", path.display(), ds.format)));
        }
        Ok(ds)
    }
}
