use std::io;

use thiserror::Error;

/// Errors produced by the epitome library.
#[derive(Debug, Error)]
pub enum EpitomeError {
    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("degenerate dictionary: {0}")]
    Degenerate(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, EpitomeError>;

impl EpitomeError {
    /// Short machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            EpitomeError::Geometry(_) => "geometry",
            EpitomeError::Shape(_) => "shape",
            EpitomeError::InvalidParameter(_) => "invalid-parameter",
            EpitomeError::NonFinite(_) => "non-finite",
            EpitomeError::Degenerate(_) => "degenerate",
            EpitomeError::Format(_) => "format",
            EpitomeError::Io(_) => "io",
        }
    }
}
