//! Error type shared by every layer of the crate.
//!
//! Each variant carries a short category that the CLI prints as a
//! machine-parsable prefix, so scripted callers can branch on the failure
//! class without parsing free-form text.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up for the requested operation.
    #[error("shape: {0}")]
    Shape(String),

    /// A value is outside the mathematical domain of an operation
    /// (log of a non-positive number, non-finite data, ...).
    #[error("domain: {0}")]
    Domain(String),

    /// The differentiation graph is malformed: non-scalar backward root,
    /// parameters not reachable from the root, missing gradients.
    #[error("autodiff: {0}")]
    Autodiff(String),

    /// A run configuration failed validation.
    #[error("config: {0}")]
    Config(String),

    /// Motion data is malformed or inconsistent.
    #[error("data: {0}")]
    Data(String),

    /// A checkpoint file is malformed or incompatible.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Training aborted (non-finite loss, resume mismatch, ...).
    #[error("train: {0}")]
    Train(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// The human-readable part without the category prefix.
    pub fn message(&self) -> String {
        match self {
            Error::Shape(m)
            | Error::Domain(m)
            | Error::Autodiff(m)
            | Error::Config(m)
            | Error::Data(m)
            | Error::Checkpoint(m)
            | Error::Train(m) => m.clone(),
            Error::Io(e) => e.to_string(),
        }
    }

    /// Stable category slug, used as the CLI error prefix.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Domain(_) => "domain",
            Error::Autodiff(_) => "autodiff",
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Checkpoint(_) => "checkpoint",
            Error::Train(_) => "train",
            Error::Io(_) => "io",
        }
    }
}
