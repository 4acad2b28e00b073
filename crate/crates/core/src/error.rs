use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("timestep {t} outside [1, {max}]")]
    Domain { t: usize, max: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite values in {0}")]
    Numeric(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("timestep grid: {0}")]
    Grid(String),

    #[error("training diverged at step {step}: {detail}")]
    Training { step: usize, detail: String },

    #[error("refinement failed at iteration {iter}: objective is not finite")]
    Refinement { iter: usize },

    #[error("degenerate model: {0}")]
    Degenerate(String),

    #[error("insufficient data: need at least {need} samples, got {got}")]
    InsufficientData { need: usize, got: usize },

    #[error("checkpoint corrupted: {0}")]
    Corruption(String),

    #[error("incompatible checkpoint: {detail} (expected config {expected}, found {found})")]
    Compatibility {
        detail: String,
        expected: String,
        found: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("plot: {0}")]
    Plot(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Grid(_) => 1,
            Error::Numeric(_)
            | Error::Training { .. }
            | Error::Refinement { .. }
            | Error::Degenerate(_) => 3,
            _ => 2,
        }
    }
}
