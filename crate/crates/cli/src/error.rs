use std::path::PathBuf;

use dsteer_core::SteerError;
use thiserror::Error;

/// Errors raised by the command-line front end.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("config: {0}")]
    Invalid(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Steer(#[from] SteerError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bundle is missing {0}")]
    MissingFile(PathBuf),

    #[error("{path}: malformed data: {message}")]
    Malformed { path: PathBuf, message: String },

    #[error("{path}: density integrates to {integral}, not 1")]
    Normalization { path: PathBuf, integral: f64 },

    #[error("output {0} exists and is not a previous bundle")]
    OutputExists(PathBuf),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for an infeasible steering problem, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Steer(e) if e.is_infeasibility() => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
