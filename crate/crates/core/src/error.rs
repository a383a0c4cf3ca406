use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("invalid graph: {0}")]
    Graph(String),
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("insufficient population: {0}")]
    Population(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("metric undefined: {0}")]
    Metric(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },
    #[error("gradient tape: {0}")]
    Tape(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error("run {run}: {source}")]
    Run {
        run: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// Stable machine-readable code, printed by the CLI on failure.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "E_IO",
            Error::Parse { .. } => "E_PARSE",
            Error::Graph(_) => "E_GRAPH",
            Error::Shape { .. } => "E_SHAPE",
            Error::Population(_) => "E_POPULATION",
            Error::Config(_) => "E_CONFIG",
            Error::Metric(_) => "E_METRIC",
            Error::NonFinite { .. } => "E_NONFINITE",
            Error::Tape(_) => "E_TAPE",
            Error::Checkpoint(_) => "E_CHECKPOINT",
            Error::Check(_) => "E_CHECK",
            Error::Run { source, .. } => source.code(),
        }
    }
}
