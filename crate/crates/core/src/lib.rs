//! Multimodal ICU mortality transformer with gradient-times-input relevance
//! attribution.

pub mod attribution;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod model;
pub mod nn;
pub mod perturb;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
