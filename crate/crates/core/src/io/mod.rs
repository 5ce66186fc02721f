//! File formats shared by the pipeline stages.

pub mod pfm;
pub mod tracks;
pub mod trajectory;
