//! Error types shared across the toolkit.

use thiserror::Error;

/// Errors produced by the geometry, simulation, estimation, metric and
/// dataset layers.
#[derive(Debug, Error)]
pub enum Error {
    /// An input value lies outside the physical domain of the camera model,
    /// e.g. a depth at or in front of the focal length.
    #[error("domain error: {0}")]
    Domain(String),

    /// A requested value cannot be produced by any valid input, e.g. a
    /// disparity outside the range attainable by the configured camera.
    #[error("range error: {0}")]
    Range(String),

    /// Array dimensions do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An operation over masked pixels was given an empty mask.
    #[error("no valid pixels under the mask")]
    EmptyMask,

    /// A least-squares or rank fit has no unique solution (constant input).
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    /// File system failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A file exists but its contents are not in a supported format.
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
