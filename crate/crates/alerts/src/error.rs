use std::path::PathBuf;

use lify_core::MetricKind;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AlertError {
    #[error("sample metric {sample} does not match rule metric {rule}")]
    MetricMismatch { sample: MetricKind, rule: MetricKind },
    #[error("{0}")]
    Validation(String),
    #[error("only staff and admins may do this")]
    Forbidden,
    #[error("alert {0} not found")]
    NotFound(String),
    #[error("alert {0} is already acknowledged")]
    AlreadyAcked(String),
    #[error("alert storage {path}: {source}")]
    Storage { path: PathBuf, source: std::io::Error },
    #[error("corrupt alert storage {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
}

impl AlertError {
    pub(crate) fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> AlertError + '_ {
        move |source| AlertError::Storage { path: path.to_path_buf(), source }
    }
}
