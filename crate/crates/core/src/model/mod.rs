//! Tri-modal encoder with late fusion, and its checkpoint format.

pub mod checkpoint;
pub mod config;
pub mod xmmp;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{EncoderConfig, Modalities, Modality, ModelConfig};
pub use xmmp::{BoundInputs, Model, Prediction};
