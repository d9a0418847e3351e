use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Sequence position estimate failed because every candidate similarity was zero.
    #[error("no position estimate: all candidate similarities are zero")]
    NoEstimate,

    #[error("insufficient correspondences: got {got}, need {need}")]
    InsufficientCorrespondences { got: usize, need: usize },

    /// ICP could not find enough point correspondences.
    #[error("no scan match: {0}")]
    NoMatch(String),

    #[error("pose graph is disconnected: nodes {0:?} unreachable from the anchor")]
    Disconnected(Vec<usize>),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("insufficient constraints: {0}")]
    InsufficientConstraints(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: 2 input, 3 numerical, 4 insufficient constraints.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_)
            | Error::Parse { .. }
            | Error::Io { .. }
            | Error::NoEstimate
            | Error::InsufficientCorrespondences { .. }
            | Error::NoMatch(_) => 2,
            Error::Disconnected(_) | Error::Numerical(_) => 3,
            Error::InsufficientConstraints(_) => 4,
        }
    }
}
