use std::path::PathBuf;

/// Errors produced anywhere in the reconstruction pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    Validation { field: &'static str, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: container error: {message}")]
    Container { path: PathBuf, message: String },

    #[error("format error at key `{key}`: {reason}")]
    Format { key: String, reason: String },

    #[error("GRAPPA calibration underdetermined: {equations} equations for {unknowns} unknowns (need at least {required})")]
    Calibration {
        equations: usize,
        unknowns: usize,
        required: usize,
    },

    #[error("non-finite loss at iteration {iteration} (scale {scale}, records {records:?})")]
    NonFinite {
        iteration: usize,
        scale: usize,
        records: Vec<usize>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn validation(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Validation {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
