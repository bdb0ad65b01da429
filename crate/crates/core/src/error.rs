use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    Dimension {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("row {row} has no valid columns")]
    DegenerateRow { row: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("missing input file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{file}:{line}: {detail}")]
    Referential {
        file: String,
        line: usize,
        detail: String,
    },

    #[error("{file}:{line}: {detail}")]
    Format {
        file: String,
        line: usize,
        detail: String,
    },

    #[error("schema: {0}")]
    Schema(String),

    #[error("class {class} has {available} labeled nodes but needs {needed}")]
    InsufficientLabels {
        class: usize,
        available: usize,
        needed: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("config `{key}`: {detail}")]
    Config { key: String, detail: String },

    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),

    #[error("training diverged at epoch {epoch}: l_co={l_co} l_kl={l_kl} total={total}")]
    Divergence {
        epoch: usize,
        l_co: f64,
        l_kl: f64,
        total: f64,
    },

    #[error("evaluation protocol: {0}")]
    Protocol(String),

    #[error("report: {0}")]
    Report(String),

    #[error("incompatible checkpoint: {0}")]
    Compatibility(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable category used in `ERROR` diagnostic lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::DegenerateRow { .. } => "degenerate-row",
            Error::NonFinite(_) => "non-finite",
            Error::Contract(_) => "contract",
            Error::MissingFile(_) => "ingestion",
            Error::Referential { .. } => "referential-integrity",
            Error::Format { .. } => "format",
            Error::Schema(_) => "schema",
            Error::InsufficientLabels { .. } => "insufficient-labels",
            Error::EmptyInput(_) => "empty-input",
            Error::Config { .. } => "config",
            Error::DegenerateEmbedding(_) => "degenerate-embedding",
            Error::Divergence { .. } => "divergence",
            Error::Protocol(_) => "protocol",
            Error::Report(_) => "report",
            Error::Compatibility(_) => "compatibility",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn config(key: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
