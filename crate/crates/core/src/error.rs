use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = BdeError> = std::result::Result<T, E>;

/// Every failure the engine can report.
///
/// Variants are grouped the way the command line maps them onto exit codes:
/// configuration and usage problems, data problems, and numeric failures.
#[derive(Debug, Error)]
pub enum BdeError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("task mismatch: {0}")]
    TaskMismatch(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("{path}: row {row}, column {column:?}: {message}")]
    Csv {
        path: PathBuf,
        /// 1-based data row (the header is row 0).
        row: usize,
        column: String,
        message: String,
    },

    #[error("non-finite value at index {index} while evaluating {what}")]
    Numeric { what: &'static str, index: usize },

    #[error("training diverged at epoch {epoch}: {source}")]
    Training {
        epoch: usize,
        #[source]
        source: Box<BdeError>,
    },

    #[error("sampler diverged at step {step} (|energy change| = {energy_change:e})")]
    Divergence { step: u64, energy_change: f64 },

    #[error("member {member} (seed {seed:#018x}) failed: {source}")]
    Member {
        member: usize,
        seed: u64,
        #[source]
        source: Box<BdeError>,
    },

    #[error("model file checksum mismatch (stored {stored:#018x}, computed {computed:#018x})")]
    ChecksumMismatch { stored: u64, computed: u64 },

    #[error("unsupported model format version {found} (this build reads up to {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("model file truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("malformed model file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl BdeError {
    /// True for failures caused by floating point blow-ups rather than bad input.
    pub fn is_numeric(&self) -> bool {
        match self {
            BdeError::Numeric { .. } | BdeError::Divergence { .. } | BdeError::Training { .. } => {
                true
            }
            BdeError::Member { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
