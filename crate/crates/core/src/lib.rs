//! Next-day affect prediction from multimodal wearable data.

pub mod analysis;
pub mod dataset;
pub mod domain;
pub mod error;
pub mod evaluation;
pub mod impute;
pub mod ingest;
pub mod labeling;
pub mod learners;
pub mod pipeline;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
