use std::path::PathBuf;

use thiserror::Error;

/// Toolkit-wide error type.
///
/// Variants are grouped by how the CLI maps them to exit codes:
/// configuration problems (exit 2), numeric or degeneracy aborts (exit 3),
/// and solver cross-check mismatches (exit 4).
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite activation in {scope}, layer {layer}")]
    NonFiniteActivation { scope: String, layer: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("task {task} baseline loss {loss:e} is at or below the degeneracy threshold")]
    DegenerateLoss { task: usize, loss: f64 },

    #[error("normalized column for task {task} is invalid (self-transference at or below threshold)")]
    InvalidColumn { task: usize },

    #[error("empty transference record stream")]
    EmptyRecords,

    #[error("records do not cover contiguous steps: {0}")]
    NonContiguousRecords(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("solver mismatch: {0}")]
    SolverMismatch(String),

    #[error("trigger never fired: {0}")]
    TriggerNotFired(String),

    #[error("step {step} aborted: {source}")]
    StepFailed { step: usize, source: Box<Error> },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), message: message.into() }
    }

    /// Process exit code the CLI reports for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape(_) | Error::Parse { .. } => 2,
            Error::NonFiniteActivation { .. }
            | Error::NonFinite(_)
            | Error::DegenerateLoss { .. }
            | Error::InvalidColumn { .. }
            | Error::EmptyRecords
            | Error::NonContiguousRecords(_)
            | Error::Infeasible(_)
            | Error::TriggerNotFired(_) => 3,
            Error::SolverMismatch(_) => 4,
            Error::StepFailed { source, .. } => source.exit_code(),
            Error::Io { .. } => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
