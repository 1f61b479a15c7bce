use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller violated a documented precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Invalid scenario, preset, mount or filter configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// IMU samples do not cover the requested interval.
    #[error("IMU coverage error: {0}")]
    Coverage(String),

    /// Malformed input file.
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("session error: {0}")]
    Session(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code: 2 for configuration/validation problems, 3 for
    /// runtime I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::Precondition(_) => 2,
            Error::Io { .. } | Error::Coverage(_) | Error::Session(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
