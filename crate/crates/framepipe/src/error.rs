//! Crate-wide error type.
//!
//! Graph validation problems are reported through
//! [`ValidationReport`](crate::graph::ValidationReport) rather than this enum
//! so that callers see every violation at once; everything else funnels here.

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid graph:\n{0}")]
    InvalidGraph(crate::graph::ValidationReport),

    /// Domain inference failed (incompatible lengths, out-of-range strategy).
    #[error("domain inference: {0}")]
    Domain(String),

    /// Dependency analysis rejected an access in strict bounds mode.
    #[error("out-of-bounds access: {0}")]
    StrictBounds(String),

    /// A job spec referenced something that does not exist or is inconsistent.
    #[error("invalid job: {0}")]
    InvalidJob(String),

    /// Corrupt or truncated data in a stored column.
    #[error("corrupt column data at byte {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },

    #[error("store: {0}")]
    Store(String),

    /// Kernel construction or invocation failed.
    #[error("kernel `{kernel}`: {reason}")]
    Kernel { kernel: String, reason: String },

    /// A work packet exhausted its retry budget.
    #[error("packet {packet} of job {job} failed after {attempts} attempts: {last}")]
    RetriesExhausted {
        job: usize,
        packet: usize,
        attempts: usize,
        last: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by bad user input (specs, arguments, bindings)
    /// as opposed to failures while executing a well-formed request.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Json(_)
                | Error::InvalidGraph(_)
                | Error::Domain(_)
                | Error::StrictBounds(_)
                | Error::InvalidJob(_)
        )
    }
}
