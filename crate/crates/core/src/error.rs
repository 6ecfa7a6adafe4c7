use std::path::PathBuf;

use crate::Vec3;

/// Errors produced by the core library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate gradient at ({:.6}, {:.6}, {:.6})", .0.x, .0.y, .0.z)]
    DegenerateGradient(Vec3),

    #[error("projection failed at iterate ({:.6}, {:.6}, {:.6})", .0.x, .0.y, .0.z)]
    ProjectionFailure(Vec3),

    #[error("level set {level} not found after {rounds} rejection rounds")]
    EmptyLevelSet { level: f64, rounds: usize },

    #[error("unsupported operation: {0}")]
    Unsupported(&'static str),

    #[error("optimization diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),

    #[error("all points are collinear")]
    Collinear,

    #[error("{}:{line}: {msg}", .path.display())]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Broad category used by the CLI to pick an exit code.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Schema(_) | Error::InvalidArgument(_) | Error::Unsupported(_) => {
                ErrorKind::Config
            }
            Error::Io { .. } | Error::Parse { .. } | Error::Checkpoint(_) => ErrorKind::Io,
            _ => ErrorKind::Numeric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Numeric,
    Io,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
