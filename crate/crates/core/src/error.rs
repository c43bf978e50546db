use std::path::PathBuf;

use crate::engine::TraceRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("non-finite {quantity} after plant step")]
    NonFinite { quantity: String },

    #[error("numerical divergence: {0}")]
    Divergence(Box<Divergence>),

    #[error("PV model fit failed: {0}")]
    Fit(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Diagnostic for a run that produced a non-finite state.
///
/// `trace` holds every record collected before the offending tick, so a
/// caller can still persist and inspect the run up to the failure.
#[derive(Debug)]
pub struct Divergence {
    pub quantity: String,
    pub leg: Option<usize>,
    pub time: f64,
    pub trace: Vec<TraceRecord>,
}

impl std::fmt::Display for Divergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.leg {
            Some(leg) => write!(f, "{} became non-finite on leg {} at t = {:.6} s", self.quantity, leg, self.time),
            None => write!(f, "{} became non-finite at t = {:.6} s", self.quantity, self.time),
        }
    }
}
