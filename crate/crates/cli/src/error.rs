use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] copert_core::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: checksum mismatch (file truncated or modified)")]
    Checksum { path: PathBuf },
    #[error("{path}: format version {found} is not supported (expected {expected})")]
    Version { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: malformed artifact: {reason}")]
    Malformed { path: PathBuf, reason: String },
    /// A check command ran to completion and found a violation.
    #[error("{0}")]
    CheckFailed(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn malformed(path: &Path, reason: impl Into<String>) -> Self {
        CliError::Malformed {
            path: path.to_path_buf(),
            reason: reason.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Core(_) | CliError::Config(_) => EXIT_CONFIG,
            CliError::CheckFailed(_) => EXIT_NUMERICAL,
            CliError::Io { .. } | CliError::Checksum { .. } | CliError::Version { .. } | CliError::Malformed { .. } => {
                EXIT_IO
            }
        }
    }
}
