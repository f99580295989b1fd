use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("template error: missing placeholder `{0}`")]
    Template(String),

    #[error("unknown template `{0}`")]
    UnknownTemplate(String),

    #[error("parse error{}: {message}", .ordinal.map(|o| format!(" at scenario {o}")).unwrap_or_default())]
    Parse {
        message: String,
        ordinal: Option<usize>,
    },

    #[error("provider error: {0}")]
    Provider(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("synthesis error: {0}")]
    Synthesis(String),

    #[error("statistics unavailable: {0}")]
    StatsUnavailable(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("degenerate samples: {0}")]
    DegenerateSamples(String),

    #[error("forge error in {path}: {message}")]
    Forge { path: String, message: String },

    #[error("channel error: {0}")]
    Channel(String),

    #[error("service error: {0}")]
    Service(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

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
    pub fn parse(message: impl Into<String>) -> Self {
        Error::Parse {
            message: message.into(),
            ordinal: None,
        }
    }

    pub fn parse_at(ordinal: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            message: message.into(),
            ordinal: Some(ordinal),
        }
    }

    pub fn forge(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Forge {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn is_parse(&self) -> bool {
        matches!(self, Error::Parse { .. })
    }
}
