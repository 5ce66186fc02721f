//! Configuration, synthetic datasets, resumable stage orchestration and
//! evaluation drivers built on `omnimap-core`.

pub mod config;
pub mod dataset;
pub mod error;
pub mod render;
pub mod scene;
pub mod stages;

pub use error::{PipelineError, Result};
