use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration value (non power-of-two length, tolerance outside (0,1), ...).
    #[error("config error: {0}")]
    Config(String),

    /// Requested resolution exceeds what the input carries.
    #[error("resolution error: requested {requested} modes from a field with {available}")]
    Resolution { requested: usize, available: usize },

    /// Model violates a structural assumption (non-positive eigenvalue, negative noise weight).
    #[error("model error: {0}")]
    Model(String),

    /// Inputs that do not fit together (dimension or scheme mismatch).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("statistics error: {0}")]
    Statistics(String),

    /// A command needs an artifact produced by another command.
    #[error("missing artifact {path}: {hint}")]
    MissingArtifact { path: PathBuf, hint: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::Usage(_) | Error::Resolution { .. } => 2,
            Error::Model(_) => 3,
            Error::MissingArtifact { .. } => 4,
            Error::Statistics(_) | Error::Io { .. } => 1,
        }
    }
}
