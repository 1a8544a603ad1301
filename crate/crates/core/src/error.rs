use std::path::PathBuf;

use thiserror::Error;

/// Every failure the pipeline can report.
///
/// Variants are grouped by [`ErrorClass`], which the command-line front end
/// maps onto its exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid filter spec: {0}")]
    InvalidSpec(String),

    #[error("shape error{}: {message}", node.as_ref().map(|n| format!(" at {n}")).unwrap_or_default())]
    Shape { node: Option<String>, message: String },

    #[error("data error{}: {message}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Data { row: Option<usize>, message: String },

    #[error("schema error: missing column `{column}`")]
    MissingColumn { column: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("graft error: incompatible tensors {tensors:?}")]
    Graft { tensors: Vec<String> },

    #[error("contract error: {0}")]
    Contract(String),

    #[error("numeric error at {node}: {message}")]
    Numeric { node: String, message: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("checkpoint corrupted: {0}")]
    Corrupt(String),

    #[error("checkpoint format version {found} is not supported (expected {expected}); re-save it with a matching release")]
    Version { found: u32, expected: u32 },

    #[error("leak between gradient and evaluation data in stage `{stage}`: {count} shared examples")]
    Leak { stage: String, count: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn shape(message: impl Into<String>) -> Self {
        Error::Shape { node: None, message: message.into() }
    }

    pub fn shape_at(node: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Shape { node: Some(node.into()), message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Error::Data { row: None, message: message.into() }
    }

    pub fn data_at(row: usize, message: impl Into<String>) -> Self {
        Error::Data { row: Some(row), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidSpec(_)
            | Error::Config(_)
            | Error::Split(_)
            | Error::Graft { .. }
            | Error::Contract(_)
            | Error::Leak { .. }
            | Error::Version { .. } => ErrorClass::Usage,
            Error::Shape { .. }
            | Error::Data { .. }
            | Error::MissingColumn { .. }
            | Error::Corrupt(_)
            | Error::Io { .. } => ErrorClass::Data,
            Error::Numeric { .. } | Error::UndefinedMetric(_) => ErrorClass::Numeric,
        }
    }

    /// Short stable identifier used in machine-parsable diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidSpec(_) => "invalid_spec",
            Error::Shape { .. } => "shape",
            Error::Data { .. } => "data",
            Error::MissingColumn { .. } => "schema",
            Error::Config(_) => "config",
            Error::Split(_) => "split",
            Error::Graft { .. } => "graft",
            Error::Contract(_) => "contract",
            Error::Numeric { .. } => "numeric",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::Corrupt(_) => "corrupt",
            Error::Version { .. } => "version",
            Error::Leak { .. } => "leak",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
