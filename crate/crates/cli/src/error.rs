use std::path::{Path, PathBuf};

use thiserror::Error;

/// Process exit codes shared by every subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Config = 2,
    Io = 3,
    Numeric = 4,
    Version = 5,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },

    #[error("{path}: version mismatch: {message}")]
    Version { path: PathBuf, message: String },

    #[error(transparent)]
    Core(#[from] mplx::Error),
}

impl CliError {
    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            message: err.to_string(),
        }
    }

    /// Attaches `path` to file-level failures of the core library.
    pub fn at(path: &Path, err: mplx::Error) -> Self {
        match err {
            mplx::Error::Format(m) => CliError::io(path, m),
            e @ mplx::Error::Version { .. } => CliError::Version {
                path: path.to_path_buf(),
                message: e.to_string(),
            },
            mplx::Error::Io { source, .. } => CliError::io(path, source),
            other => CliError::Core(other),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::Config,
            CliError::Io { .. } => ExitCode::Io,
            CliError::Version { .. } => ExitCode::Version,
            CliError::Core(e) => match e {
                mplx::Error::Config(_)
                | mplx::Error::Usage(_)
                | mplx::Error::Spawn { .. }
                | mplx::Error::Dimension { .. } => ExitCode::Config,
                mplx::Error::Io { .. } | mplx::Error::Format(_) => ExitCode::Io,
                mplx::Error::Diverged { .. }
                | mplx::Error::NonFinite(_)
                | mplx::Error::DegenerateSlice { .. }
                | mplx::Error::Invariant(_) => ExitCode::Numeric,
                mplx::Error::Version { .. } => ExitCode::Version,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
