use std::path::PathBuf;

use comet_core::backbones::ModelError;
use comet_core::data::DataError;
use comet_core::metrics::MetricError;
use thiserror::Error;

use crate::config::ConfigIssue;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error:\n{}", list(.0))]
    Config(Vec<ConfigIssue>),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

fn list(issues: &[ConfigIssue]) -> String {
    issues.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n")
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Model(_) | HarnessError::Metric(_) => EXIT_CONFIG,
            HarnessError::Diverged(_) => EXIT_DIVERGED,
            HarnessError::Io { .. } | HarnessError::Format { .. } => EXIT_IO,
            HarnessError::Data(e) => match e {
                DataError::InvalidRate(_) | DataError::Config(_) => EXIT_CONFIG,
                _ => EXIT_IO,
            },
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
        let path = path.into();
        move |source| HarnessError::Io { path, source }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
