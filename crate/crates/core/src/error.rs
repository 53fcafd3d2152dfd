use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("event at t={event} precedes clock t={clock}")]
    EventInPast { event: f64, clock: f64 },

    #[error("simulation invariant violated: {0}")]
    Invariant(String),

    #[error("{path}:{line}: {message}")]
    TraceFormat {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("statistics for `{0}` are empty; bound is undefined")]
    EmptyStats(String),

    #[error("cannot compare reports: trace hash {left} differs from {right}")]
    TraceMismatch { left: String, right: String },

    #[error("run is empty: no programs were simulated")]
    EmptyRun,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
