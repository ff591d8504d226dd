use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid C-arm pose: {0}")]
    InvalidPose(String),
    #[error("degenerate pose: azimuth undefined for a vertical direction")]
    DegeneratePose,
    #[error("projection degenerate: point lies in the source plane")]
    ProjectionDegenerate,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("out of bounds: {0}")]
    Bounds(String),
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("malformed data: {0}")]
    Format(String),
    #[error("size mismatch: expected {expected} values, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("mesh is not closed: {0}")]
    NotClosed(String),
    #[error("mesh orientation error: {0}")]
    Orientation(String),
    #[error("ill-posed problem: {0}")]
    IllPosed(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("undefined quantity: {0}")]
    Undefined(String),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("matching failed: {0}")]
    MatchingFailure(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used in CLI and HTTP error payloads.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidPose(_) => "invalid_pose",
            Error::DegeneratePose => "degenerate_pose",
            Error::ProjectionDegenerate => "projection_degenerate",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::Bounds(_) => "bounds",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::Format(_) => "format",
            Error::SizeMismatch { .. } => "size_mismatch",
            Error::NotClosed(_) => "not_closed",
            Error::Orientation(_) => "orientation",
            Error::IllPosed(_) => "ill_posed",
            Error::InsufficientData(_) => "insufficient_data",
            Error::Undefined(_) => "undefined",
            Error::Degenerate(_) => "degenerate",
            Error::MatchingFailure(_) => "matching_failure",
            Error::Numerical(_) => "numerical",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    /// Internal failures are the ones not attributable to user input.
    pub fn is_internal(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}
