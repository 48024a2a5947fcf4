use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid initial condition: {0}")]
    InvalidInitialCondition(String),

    #[error("terminal reward requested for a running episode")]
    NotTerminal,

    #[error("training diverged at episode {episode}, step {step}: {detail}")]
    Diverged {
        episode: usize,
        step: usize,
        detail: String,
    },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("insufficient failure data: {0}")]
    InsufficientFailureData(String),

    #[error("insufficient data: need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: dimension {dim} value {value} outside support ({lo}, {hi}]")]
    SupportViolation {
        line: usize,
        dim: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error("{file} not found; run {stage}")]
    MissingArtifact { file: String, stage: &'static str },

    #[error("reported failure did not reproduce: {0}")]
    NotReproduced(String),

    #[error("manifest mismatch for {0}")]
    ManifestMismatch(String),

    #[error("unsupported format_version {0}")]
    FormatVersion(u32),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
