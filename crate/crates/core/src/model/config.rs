use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{BlockConfig, LayerOptions};

/// Input modality of a record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Events,
    Notes,
    Vitals,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Events, Modality::Notes, Modality::Vitals];

    pub fn name(self) -> &'static str {
        match self {
            Self::Events => "events",
            Self::Notes => "notes",
            Self::Vitals => "vitals",
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Which encoders feed the fusion head. Disabled encoders contribute a zero
/// representation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Modalities {
    pub events: bool,
    pub notes: bool,
    pub vitals: bool,
}

impl Modalities {
    pub const ALL: Self = Self { events: true, notes: true, vitals: true };

    pub fn contains(&self, m: Modality) -> bool {
        match m {
            Modality::Events => self.events,
            Modality::Notes => self.notes,
            Modality::Vitals => self.vitals,
        }
    }

    pub fn only(list: &[Modality]) -> Self {
        Self {
            events: list.contains(&Modality::Events),
            notes: list.contains(&Modality::Notes),
            vitals: list.contains(&Modality::Vitals),
        }
    }

    pub fn enabled(&self) -> Vec<Modality> {
        Modality::ALL.into_iter().filter(|m| self.contains(*m)).collect()
    }

    /// All seven non-empty subsets, singles first.
    pub fn subsets() -> Vec<Self> {
        use Modality::*;
        [
            &[Events][..],
            &[Notes],
            &[Vitals],
            &[Events, Notes],
            &[Events, Vitals],
            &[Notes, Vitals],
            &[Events, Notes, Vitals],
        ]
        .iter()
        .map(|l| Self::only(l))
        .collect()
    }

    pub fn label(&self) -> String {
        self.enabled().iter().map(|m| m.name()).collect::<Vec<_>>().join("+")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { layers: 2, heads: 4, ffn: 128 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Event grid width D, missingness columns included.
    pub event_width: usize,
    pub vital_channels: usize,
    pub vocab_size: usize,
    /// Longest note sequence, `[CLS]` included.
    pub max_note_len: usize,
    pub hidden: usize,
    pub fusion_hidden: usize,
    pub events: EncoderConfig,
    pub notes: EncoderConfig,
    pub vitals: EncoderConfig,
    pub dropout: f64,
    pub layer_options: LayerOptions,
    /// Add sinusoidal positions to the event and vitals embeddings.
    pub positional: bool,
    pub modalities: Modalities,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            event_width: 76,
            vital_channels: 21,
            vocab_size: 1000,
            max_note_len: 513,
            hidden: 64,
            fusion_hidden: 64,
            events: EncoderConfig::default(),
            notes: EncoderConfig::default(),
            vitals: EncoderConfig::default(),
            dropout: 0.1,
            layer_options: LayerOptions::default(),
            positional: true,
            modalities: Modalities::ALL,
        }
    }
}

impl ModelConfig {
    /// Removes every additive intercept (linear biases, layer-norm shift and
    /// gain, and the sinusoidal position offsets), which makes the logits
    /// positively homogeneous in the inputs under attribution mode.
    pub fn intercept_free(mut self) -> Self {
        self.layer_options = LayerOptions { bias: false, ln_affine: false };
        self.positional = false;
        self
    }

    /// Input widths, vocabulary and longest note taken from a dataset.
    pub fn sized_for(mut self, ds: &Dataset) -> Self {
        self.event_width = ds.meta.event_columns.len();
        self.vital_channels = ds.meta.vital_channels.len();
        self.vocab_size = ds.meta.vocabulary.len();
        self.max_note_len = ds.records.iter().map(|r| r.notes.len()).max().unwrap_or(1);
        self
    }

    pub fn encoder(&self, m: Modality) -> &EncoderConfig {
        match m {
            Modality::Events => &self.events,
            Modality::Notes => &self.notes,
            Modality::Vitals => &self.vitals,
        }
    }

    pub fn block(&self, m: Modality) -> BlockConfig {
        let e = self.encoder(m);
        BlockConfig { hidden: self.hidden, heads: e.heads, ffn: e.ffn, dropout: self.dropout }
    }

    pub fn validate(&self) -> Result<()> {
        for m in Modality::ALL {
            self.block(m).validate()?;
        }
        if self.positional && self.hidden % 2 != 0 {
            return Err(Error::InvalidArgument("positional encodings need an even hidden width".into()));
        }
        if self.event_width == 0 || self.vital_channels == 0 || self.vocab_size == 0 || self.max_note_len == 0 {
            return Err(Error::InvalidArgument("input dimensions must be positive".into()));
        }
        if !(self.modalities.events || self.modalities.notes || self.modalities.vitals) {
            return Err(Error::InvalidArgument("at least one modality must be enabled".into()));
        }
        Ok(())
    }
}
