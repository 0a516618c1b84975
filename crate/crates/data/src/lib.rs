//! Dataset curation, synthetic data generation and augmentation.

pub mod augment;
pub mod error;
pub mod fixtures;
pub mod manifest;
pub mod media;
pub mod records;
pub mod split;
pub mod synth;

pub use error::{DataError, Result};
