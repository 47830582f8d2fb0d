// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error types shared across the toolkit.

use std::path::PathBuf;

use thiserror::Error;

use crate::io::atnd::AtndError;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand dimensions disagree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A value violates a documented precondition or invariant.
    #[error("invalid input: {0}")]
    Validation(String),

    /// Aggregation was asked for heads that are not present.
    #[error("missing attention maps for heads {0:?}")]
    MissingHeads(Vec<u32>),

    #[error("unknown concept {name:?}; available: {}", available.join(", "))]
    UnknownConcept {
        name: String,
        available: Vec<String>,
    },

    #[error("vote accumulator is empty; no relevance scores were recorded")]
    EmptyAccumulator,

    #[error("downscaling from {from} to {to} is not supported")]
    DownscaleNotSupported { from: usize, to: usize },

    #[error(transparent)]
    Atnd(#[from] AtndError),

    /// Malformed mask, manifest or image file.
    #[error("format error: {0}")]
    Format(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by unreadable or malformed files.
    pub fn is_format(&self) -> bool {
        matches!(
            self,
            Error::Atnd(_)
                | Error::Format(_)
                | Error::Io { .. }
                | Error::Json(_)
                | Error::Csv(_)
                | Error::Image(_)
        )
    }
}
