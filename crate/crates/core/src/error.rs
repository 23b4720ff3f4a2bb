use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// The variants are grouped so that a front end can map them onto a small,
/// stable set of exit codes (see [`Error::category`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("index out of range: {0}")]
    Index(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("non-finite value produced by {0}")]
    Numeric(String),

    #[error("label {label} out of range for {num_classes} classes")]
    Label { label: usize, num_classes: usize },

    #[error("forward cache does not belong to this model: {0}")]
    Cache(String),

    #[error("{path}: bad IDX header: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("{path}: expected {expected} payload bytes, found {found}")]
    Length {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("config error{}, key `{key}`: {message}", at_line(*line))]
    Config {
        /// 1-based line in the config text; absent for values that came
        /// from a preset or the command line.
        line: Option<usize>,
        key: String,
        message: String,
    },

    #[error("convex run violates the step-size hypothesis: {0}")]
    Hypothesis(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serde(String),
}

fn at_line(line: Option<usize>) -> String {
    line.map(|l| format!(" at line {l}")).unwrap_or_default()
}

/// Coarse failure classes used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numeric,
    Internal,
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config { .. } | Error::Hypothesis(_) | Error::Argument(_) => {
                ErrorCategory::Config
            }
            Error::Format { .. } | Error::Length { .. } | Error::Data(_) | Error::Label { .. } => {
                ErrorCategory::Data
            }
            Error::Numeric(_) => ErrorCategory::Numeric,
            Error::Shape { .. }
            | Error::Index(_)
            | Error::Cache(_)
            | Error::Io { .. }
            | Error::Serde(_) => ErrorCategory::Internal,
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
