use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library. The CLI maps them onto process exit codes
/// through [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("line {line}: timestamp {time} does not increase on the previous row")]
    Ordering { line: usize, time: f64 },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("out of bounds: {0}")]
    Bounds(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("artefact [{start}, {end}) overlaps an already-marked region")]
    Overlap { start: usize, end: usize },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("AUC is undefined when labels contain a single class")]
    UndefinedAuc,

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checksum failure: {0}")]
    Checksum(String),

    #[error("inconsistent tensor shapes: {0}")]
    ShapeConsistency(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for data problems, 3 for numerical failures. Usage errors (1) are
    /// detected by the CLI before the library is called.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) | Error::Training(_) => 3,
            _ => 2,
        }
    }
}
