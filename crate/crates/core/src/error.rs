use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = UqError> = std::result::Result<T, E>;

/// Errors raised across the toolkit.
///
/// Variants are grouped so the CLI can map them onto stable exit codes:
/// configuration problems, data problems, and training divergence.
#[derive(Debug, Error)]
pub enum UqError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("degenerate uncertainty: {0}")]
    DegenerateUncertainty(String),

    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),

    #[error("training diverged at epoch {epoch}{}", member.map(|m| format!(" (member {m})")).unwrap_or_default())]
    Divergence { epoch: usize, member: Option<usize> },

    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{path}: row {row}, column `{column}`: cannot parse `{value}` as a number")]
    Parse {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },

    #[error("{path}: row {row}, column `{column}`: non-finite value")]
    NonFinite { path: PathBuf, row: usize, column: String },

    #[error("{path}: file contains no data rows")]
    EmptyFile { path: PathBuf },

    #[error("{path}: unsupported format (expected `{expected}`, found `{found}`)")]
    Format {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("lineage mismatch: {0}")]
    Lineage(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl UqError {
    /// Tags a divergence error with the ensemble member that produced it.
    pub fn with_member(self, index: usize) -> Self {
        match self {
            UqError::Divergence { epoch, .. } => UqError::Divergence {
                epoch,
                member: Some(index),
            },
            other => other,
        }
    }
}

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(UqError::Input(format!("{what}[{i}] is not finite"))),
        None => Ok(()),
    }
}
