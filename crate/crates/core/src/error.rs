use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("pixel ({u:.3}, {v:.3}) lies outside the field of view")]
    OutOfFov { u: f64, v: f64 },

    #[error("triangulation degenerate: {0}")]
    TriangulationDegenerate(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("pose estimation failed: inlier ratio {inlier_ratio:.3} below minimum")]
    PoseFailure { inlier_ratio: f64 },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse_line(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            location: format!("line {line}"),
            message: message.into(),
        }
    }

    pub(crate) fn parse_offset(offset: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            location: format!("byte offset {offset}"),
            message: message.into(),
        }
    }
}
