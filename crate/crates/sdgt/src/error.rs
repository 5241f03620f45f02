use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the simulator library.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates a documented precondition.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Graph generation exhausted its retry budget without connectivity.
    #[error("could not generate a connected graph: {0}")]
    Disconnected(String),

    /// A matrix failed a structural requirement (symmetry, stochasticity, ...).
    #[error("invalid mixing matrix: {0}")]
    InvalidMatrix(String),

    /// A linear system could not be solved (singular / indefinite operator).
    #[error("singular system: {0}")]
    Singular(String),

    /// Requested data is absent (missing column, missing optimum, ...).
    #[error("missing data: {0}")]
    Missing(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
