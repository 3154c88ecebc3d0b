use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_TABLE: &str = include_str!("../../config/normal_values.json");

/// One charted event variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EventFeature {
    Categorical { name: String, categories: Vec<String>, normal: String },
    Continuous { name: String, normal: f64 },
}

impl EventFeature {
    pub fn name(&self) -> &str {
        match self {
            Self::Categorical { name, .. } | Self::Continuous { name, .. } => name,
        }
    }

    /// Value columns this feature occupies in the event grid.
    pub fn width(&self) -> usize {
        match self {
            Self::Categorical { categories, .. } => categories.len(),
            Self::Continuous { .. } => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VitalChannel {
    pub name: String,
    pub normal: f64,
}

/// Default "normal" values, categorical levels, and the target-leak
/// stoplist. Shipped as `config/normal_values.json`; any field may be
/// overridden by loading a different file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalValueTable {
    pub events: Vec<EventFeature>,
    pub vitals: Vec<VitalChannel>,
    pub leak_words: Vec<String>,
}

impl Default for NormalValueTable {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_TABLE).expect("bundled normal-value table parses")
    }
}

impl NormalValueTable {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn event_feature(&self, name: &str) -> Option<(usize, &EventFeature)> {
        self.events.iter().enumerate().find(|(_, f)| f.name() == name)
    }

    pub fn vital_channel(&self, name: &str) -> Option<usize> {
        self.vitals.iter().position(|c| c.name == name)
    }

    pub fn value_width(&self) -> usize {
        self.events.iter().map(EventFeature::width).sum()
    }

    /// Grid width: value columns followed by one mask column per feature.
    pub fn event_width(&self) -> usize {
        self.value_width() + self.events.len()
    }

    /// First value column of each feature.
    pub fn column_offsets(&self) -> Vec<usize> {
        self.events
            .iter()
            .scan(0, |acc, f| {
                let start = *acc;
                *acc += f.width();
                Some(start)
            })
            .collect()
    }

    /// Column names: `feature`, `feature=category`, then `mask:feature`.
    pub fn event_columns(&self) -> Vec<String> {
        let mut cols = Vec::with_capacity(self.event_width());
        for f in &self.events {
            match f {
                EventFeature::Continuous { name, .. } => cols.push(name.clone()),
                EventFeature::Categorical { name, categories, .. } => {
                    cols.extend(categories.iter().map(|c| format!("{name}={c}")))
                }
            }
        }
        cols.extend(self.events.iter().map(|f| format!("mask:{}", f.name())));
        cols
    }

    /// Which grid columns are z-normalised (continuous values only).
    pub fn event_continuous(&self) -> Vec<bool> {
        let mut flags = Vec::with_capacity(self.event_width());
        for f in &self.events {
            match f {
                EventFeature::Continuous { .. } => flags.push(true),
                EventFeature::Categorical { categories, .. } => flags.extend(categories.iter().map(|_| false)),
            }
        }
        flags.extend(self.events.iter().map(|_| false));
        flags
    }

    pub fn vital_names(&self) -> Vec<String> {
        self.vitals.iter().map(|c| c.name.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_table_has_canonical_widths() {
        let t = NormalValueTable::default();
        assert_eq!(t.events.len(), 17);
        assert_eq!(t.event_width(), 76);
        assert_eq!(t.vitals.len(), 21);
        assert_eq!(t.event_columns().len(), 76);
        assert_eq!(t.event_continuous().iter().filter(|c| **c).count(), 12);
        assert!(t.leak_words.iter().any(|w| w == "dying"));
    }
}
