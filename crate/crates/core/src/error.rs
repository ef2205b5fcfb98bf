use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error(transparent)]
    Dsl(#[from] crate::dsl::ParseError),

    #[error("bounds error: {0}")]
    Bounds(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("environment error: {0}")]
    Environment(String),

    #[error("io error on {path}: {source}")]
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

    /// Short machine-readable category, used in CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Schema(_) => "schema",
            Error::Domain(_) => "domain",
            Error::Dsl(e) => e.kind.as_str(),
            Error::Bounds(_) => "bounds",
            Error::Graph(_) => "graph",
            Error::Format(_) => "format",
            Error::Config(_) => "config",
            Error::Generation(_) => "generation",
            Error::Backend(_) => "backend",
            Error::Environment(_) => "environment",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
