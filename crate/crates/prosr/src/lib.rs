//! IO, file formats, configuration, and the command implementations behind
//! the `prosr` binary. All numeric computation lives in `prosr-core`; this
//! crate handles JSONL/CSV/TOML plumbing, worker fan-out, and deterministic
//! serialization.

pub mod cli;
pub mod commands;
pub mod config;
pub mod formats;
pub mod ingest;
pub mod workers;

use std::path::PathBuf;

/// Errors surfaced by the CLI, mapped onto the process exit codes: input and
/// configuration problems exit 2, empty results exit 3.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Empty(String),
    #[error("refusing to overwrite {0} (pass --force to allow)")]
    WouldOverwrite(PathBuf),
}

impl AppError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Empty(_) => 3,
            _ => 2,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> AppError {
        let path = path.into();
        move |source| AppError::Io { path, source }
    }
}

pub type Result<T> = std::result::Result<T, AppError>;
