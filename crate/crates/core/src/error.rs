use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical overflow in {0}")]
    NumericalOverflow(String),

    #[error("gradient mismatch: {0}")]
    GradientMismatch(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("zero-norm vector: cannot form cosine similarity ({0})")]
    ZeroNorm(String),

    #[error("features must be loaded from a cache file")]
    FeaturesMustBeLoaded,

    #[error("missing labels: {0}")]
    MissingLabels(String),

    #[error("malformed {kind} file: {msg}")]
    Format { kind: &'static str, msg: String },

    #[error("config error at line {line}, key `{key}`: {msg}")]
    Config { line: usize, key: String, msg: String },

    #[error("missing artifact {}: run stage `{stage}` first", path.display())]
    MissingArtifact { stage: &'static str, path: PathBuf },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(kind: &'static str, msg: impl Into<String>) -> Self {
        Error::Format { kind, msg: msg.into() }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Process exit code for the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::MissingArtifact { .. } => 3,
            Error::NumericalOverflow(_) | Error::GradientMismatch(_) => 4,
            _ => 1,
        }
    }
}
