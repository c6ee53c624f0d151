use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, ShfError>;

#[derive(Debug, Error)]
pub enum ShfError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate quantization: |g^T B| vanishes along the field direction")]
    DegenerateQuantization,

    #[error("unphysical geometry: |r| = {distance:.4} Å is below the minimum {min:.4} Å")]
    UnphysicalGeometry { distance: f64, min: f64 },

    #[error("undefined angle: zero-magnitude effective field")]
    UndefinedAngle,

    #[error("ill-conditioned level labeling: {0}")]
    IllConditionedLabeling(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("frame mismatch: expected `frame D1 D2 b`, found `{0}`")]
    FrameMismatch(String),

    #[error("duplicate position for `{first}` and `{second}` (within {tol} Å)")]
    DuplicatePosition { first: String, second: String, tol: f64 },

    #[error("{what} out of range: {detail}")]
    OutOfRange { what: &'static str, detail: String },

    #[error("non-uniform sampling at index {index}")]
    NonUniformSampling { index: usize },

    #[error("trace too short: {len} samples, need at least {min}")]
    TooShort { len: usize, min: usize },

    #[error("no signal: trace is flat or non-positive")]
    NoSignal,

    #[error("fit did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("singular normal matrix; unidentifiable parameters: {}", params.join(", "))]
    Unidentifiable { params: Vec<&'static str> },

    #[error("unknown ion `{label}`; known labels: {}", known.join(", "))]
    UnknownIon { label: String, known: Vec<String> },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl ShfError {
    /// Input errors map to CLI exit code 2, everything else to 3.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            ShfError::InvalidInput(_)
                | ShfError::Parse { .. }
                | ShfError::FrameMismatch(_)
                | ShfError::DuplicatePosition { .. }
                | ShfError::OutOfRange { .. }
                | ShfError::NonUniformSampling { .. }
                | ShfError::TooShort { .. }
                | ShfError::UnknownIon { .. }
                | ShfError::MissingFile(_)
                | ShfError::Io(_)
                | ShfError::Csv(_)
        )
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> ShfError {
    ShfError::InvalidInput(msg.into())
}

/// 1-based line containing byte `offset` of `text`.
pub(crate) fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}
