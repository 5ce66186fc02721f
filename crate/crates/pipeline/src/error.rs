use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: omnimap_core::Error,
    },
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: omnimap_core::Error,
    },
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    /// Any failure inside a stage of a full run.
    #[error("{stage} stage failed: {source}")]
    InStage {
        stage: &'static str,
        #[source]
        source: Box<PipelineError>,
    },
}

pub type Result<T> = std::result::Result<T, PipelineError>;

impl PipelineError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::InvalidScene(_) => 2,
            PipelineError::UndefinedMetric(_) => 4,
            PipelineError::Stage { source: omnimap_core::Error::UndefinedMetric(_), .. } => 4,
            PipelineError::Stage { .. } | PipelineError::File { .. } => 3,
            PipelineError::InStage { source, .. } => match source.exit_code() {
                2 => 3,
                code => code,
            },
        }
    }

    /// Name of the failing stage, if known.
    pub fn stage_name(&self) -> Option<&'static str> {
        match self {
            PipelineError::Stage { stage, .. } | PipelineError::InStage { stage, .. } => Some(stage),
            _ => None,
        }
    }

    pub(crate) fn stage(stage: &'static str) -> impl FnOnce(omnimap_core::Error) -> Self {
        move |source| PipelineError::Stage { stage, source }
    }

    pub(crate) fn file<E: Into<omnimap_core::Error>>(path: impl Into<PathBuf>) -> impl FnOnce(E) -> Self {
        let path = path.into();
        move |source| PipelineError::File { path, source: source.into() }
    }
}
