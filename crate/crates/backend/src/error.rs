use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("backend timed out after {0:?}")]
    Timeout(Duration),
    #[error("protocol violation: {0}")]
    Protocol(String),
    /// The backend answered with `status = error`.
    #[error("backend error: {0}")]
    Remote(String),
    #[error("cannot reach backend after {attempts} attempt(s): {message}")]
    Connection { attempts: u32, message: String },
}
