use std::io;
use std::path::{Path, PathBuf};

use gmem_core::Error as CoreError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl Error {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.to_path_buf(),
            reason: reason.into(),
        }
    }

    /// 0 success, 2 config or usage, 3 I/O, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. } | Error::Format { .. } => 3,
            Error::Numerical(_) => 4,
            Error::Core(e) => match e {
                CoreError::DimensionMismatch { .. }
                | CoreError::RankOutOfRange { .. }
                | CoreError::IndexOutOfRange { .. }
                | CoreError::OutOfRange { .. }
                | CoreError::InvalidConfig(_)
                | CoreError::TimeBelowMinimum { .. }
                | CoreError::Empty(_)
                | CoreError::OverlappingModes { .. } => 2,
                _ => 4,
            },
        }
    }
}
