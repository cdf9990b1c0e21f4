use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}: point file has no normal fields (nx ny nz)")]
    MissingNormals(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid synthetic room: {0}")]
    InvalidSpec(String),

    #[error("only {found} correspondences (need at least {needed})")]
    InsufficientCorrespondences { found: usize, needed: usize },

    #[error("pose graph is not connected: node {0} unreachable from node 0")]
    NotConnected(usize),

    #[error("singular normal equations: {0}")]
    SingularSystem(String),

    #[error("no plane hypotheses available")]
    NoPlanes,

    #[error("no base plane found in the current registration")]
    LayoutNotFound,

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("trajectory lengths differ: {estimated} estimated vs {ground_truth} ground truth")]
    LengthMismatch {
        estimated: usize,
        ground_truth: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),
}

/// Coarse failure class, used by the command-line driver for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Io,
    Numerical,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Io => "io",
            ErrorCategory::Numerical => "numerical",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Io => 3,
            ErrorCategory::Numerical => 4,
        }
    }
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Parse { .. } | Error::MissingNormals(_) | Error::Io { .. } => ErrorCategory::Io,
            Error::InvalidSpec(_) | Error::Config(_) => ErrorCategory::Config,
            _ => ErrorCategory::Numerical,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
