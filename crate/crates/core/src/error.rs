//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A table or dataset does not match the expected feature/label layout.
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// CCC with a zero denominator (both inputs constant with equal means).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("config error: {0}")]
    Config(String),

    /// A dataset does not match the layout recorded in a model bundle.
    #[error("manifest mismatch: {0}")]
    Manifest(String),

    #[error("missing upstream artifact {}: run `{stage}` first", path.display())]
    StageDependency { path: PathBuf, stage: String },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

/// Coarse failure classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    StageDependency,
    Other,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Parameter(_) => ErrorClass::Config,
            Error::Schema(_)
            | Error::Parse { .. }
            | Error::EmptyInput(_)
            | Error::Range(_)
            | Error::Shape(_)
            | Error::UndefinedMetric(_)
            | Error::InsufficientData(_)
            | Error::Precondition(_)
            | Error::Manifest(_) => ErrorClass::Data,
            Error::StageDependency { .. } => ErrorClass::StageDependency,
            Error::Io { .. } | Error::Serde(_) => ErrorClass::Other,
        }
    }

    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::Parse { .. } => "parse",
            Error::EmptyInput(_) => "empty_input",
            Error::Range(_) => "range",
            Error::Shape(_) => "shape",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::InsufficientData(_) => "insufficient_data",
            Error::Precondition(_) => "precondition",
            Error::Parameter(_) => "parameter",
            Error::Config(_) => "config",
            Error::Manifest(_) => "manifest",
            Error::StageDependency { .. } => "stage_dependency",
            Error::Io { .. } => "io",
            Error::Serde(_) => "serde",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
