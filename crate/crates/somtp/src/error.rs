//! Crate-wide error type.

use crate::training::TrainReport;

/// Errors surfaced by planning, training, and file I/O operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Underlying I/O failure, annotated with the path involved.
    #[error("{path}: {source}")]
    Io {
        /// File the operation touched.
        path: String,
        /// Original I/O error.
        #[source]
        source: std::io::Error,
    },

    /// A file exists but its contents are not what the format requires.
    #[error("{path}: {reason}")]
    Format {
        /// File that failed to parse or validate.
        path: String,
        /// What was wrong with it.
        reason: String,
    },

    /// Two pieces of data that must agree in shape do not.
    #[error("shape mismatch: {context} (expected {expected}, got {got})")]
    ShapeMismatch {
        /// Operation that detected the mismatch.
        context: &'static str,
        /// Expected dimension.
        expected: usize,
        /// Actual dimension.
        got: usize,
    },

    /// A numeric input left the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value is invalid or inconsistent.
    #[error("invalid config: {0}")]
    Config(String),

    /// Obstacle resampling could not find a safe placement.
    #[error("could not place obstacle clear of the start pose after {attempts} attempts")]
    ObstaclePlacement {
        /// Number of rejected samples before giving up.
        attempts: usize,
    },

    /// Training produced a non-finite loss and was aborted.
    #[error("training diverged at epoch {epoch}, step {step} (loss not finite)")]
    TrainingDiverged {
        /// Epoch (0-based) in which divergence was detected.
        epoch: usize,
        /// Step within the epoch.
        step: usize,
        /// Report covering the epochs completed before the abort.
        report: Box<TrainReport>,
    },
}

impl Error {
    /// Wraps an I/O error with the path it occurred on.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Builds a format error for `path`.
    pub fn format(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.into(), reason: reason.into() }
    }

    /// Builds a configuration error.
    pub fn config(message: impl Into<String>) -> Self {
        Error::Config(message.into())
    }
}
