use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("no landmarks in field of view")]
    EmptyFov,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(&'static str),

    #[error("numerical failure: {0}")]
    Numerical(&'static str),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("missing field `{field}` on line {line}")]
    MissingField { field: &'static str, line: usize },

    #[error("duplicate landmark id {0}")]
    DuplicateId(u64),

    #[error("checkpoint format_version {found} is not supported (expected {expected})")]
    Version { found: u64, expected: u64 },

    #[error("checkpoint array `{name}` has shape {found:?}, expected {expected:?}")]
    ArrayShape {
        name: String,
        found: (usize, usize),
        expected: (usize, usize),
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-parseable category used for CLI exit messages.
    pub fn category(&self) -> &'static str {
        match self {
            Error::NonFinite(_) => "non_finite",
            Error::Shape { .. } | Error::ArrayShape { .. } => "shape",
            Error::Empty(_) | Error::EmptyFov => "empty_input",
            Error::Config(_) => "config",
            Error::Degenerate(_) => "degenerate",
            Error::Numerical(_) => "numerical",
            Error::Parse { .. } | Error::MissingField { .. } | Error::Json(_) => "parse",
            Error::DuplicateId(_) => "duplicate_id",
            Error::Version { .. } => "version",
            Error::Stage { source, .. } => source.category(),
            Error::Io(_) => "io",
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
