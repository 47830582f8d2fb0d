// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt;
use std::path::Path;

use headlens_core::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FORMAT: u8 = 2;
pub const EXIT_EMPTY: u8 = 3;
pub const EXIT_CONFIG: u8 = 4;

/// An error message paired with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn format(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_FORMAT,
            message: message.into(),
        }
    }

    pub fn empty(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_EMPTY,
            message: message.into(),
        }
    }
}

fn code_for(e: &Error) -> u8 {
    match e {
        Error::EmptyAccumulator => EXIT_EMPTY,
        Error::UnknownConcept { .. }
        | Error::Validation(_)
        | Error::DownscaleNotSupported { .. } => EXIT_CONFIG,
        _ => EXIT_FORMAT,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self {
            code: code_for(&e),
            message: e.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Extension for naming the file an error came from.
pub trait Context<T> {
    fn at(self, path: &Path) -> CliResult<T>;
}

impl<T> Context<T> for headlens_core::Result<T> {
    fn at(self, path: &Path) -> CliResult<T> {
        self.map_err(|e| {
            let mut err = CliError::from(e);
            let shown = path.display().to_string();
            if !err.message.contains(&shown) {
                err.message = format!("{shown}: {}", err.message);
            }
            err
        })
    }
}
