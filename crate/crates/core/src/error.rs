//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Errors raised by the simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violated a precondition (shape, range, rank budget).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A computation produced a non-finite value or failed to factorize.
    #[error("numeric failure: {0}")]
    NumericFailure(String),

    /// A run configuration failed schema validation.
    #[error("configuration error: {0}")]
    Config(String),

    /// A single client failed during a federated run.
    #[error("client {client_id} failed at step {step}: {source}")]
    Client {
        client_id: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::NumericFailure(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 2 for usage and configuration problems, 3 for numeric failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) => 2,
            Error::NumericFailure(_) => 3,
            Error::Client { source, .. } => source.exit_code(),
            Error::Io { .. } | Error::Parse { .. } => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
