use std::io;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] repfuse_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("{}: truncated, header declares {expected} bytes but file has {actual}", path.display())]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },
    #[error("{}:{line}: {msg}", path.display())]
    Manifest {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("pairing error: {0}")]
    Pairing(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// Process exit code: 1 configuration, 2 data or pairing, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        use repfuse_core::Error as Core;
        match self {
            Error::Config(_) | Error::Core(Core::Config(_)) => 1,
            Error::Numerical(_) | Error::Core(Core::Training(_)) => 3,
            _ => 2,
        }
    }
}
