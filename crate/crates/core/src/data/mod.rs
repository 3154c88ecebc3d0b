//! Preprocessing of raw ICU exports and synthetic cohort generation.

pub mod dataset;
pub mod events;
pub mod matching;
pub mod notes;
pub mod record;
pub mod stats;
pub mod synthetic;
pub mod table;
pub mod vitals;
pub mod vocab;

pub use dataset::{Dataset, DatasetMeta};
pub use events::{preprocess_events, RawEventRow};
pub use matching::{build_dataset, match_modalities};
pub use notes::{note_words, RawNote};
pub use record::{EventSequence, MultimodalRecord, NoteTokens, VitalSigns};
pub use stats::{ColumnStats, NormStats};
pub use synthetic::{generate_synthetic, GroundTruth, PlantedCell, Planting, SyntheticSpec};
pub use table::NormalValueTable;
pub use vitals::{preprocess_vitals, RawVitalRow};
pub use vocab::Vocabulary;
