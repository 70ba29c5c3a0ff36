use std::path::PathBuf;

/// Errors produced while building datasets, fitting, testing or parsing input.
#[derive(Debug, thiserror::Error)]
pub enum ZipgError {
    #[error("dimension mismatch in {matrix}: expected {expected}, found {found}")]
    DimensionMismatch {
        matrix: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("{name} = {value} is outside the open interval (0, 1)")]
    Domain { name: &'static str, value: f64 },

    #[error("non-finite log-likelihood contribution at observation {index}")]
    NonFiniteLikelihood { index: usize },

    #[error("degenerate taxon: all counts are zero")]
    DegenerateTaxon,

    #[error("objective is not finite at the starting point")]
    NonFiniteStart,

    #[error("EM produced a non-finite likelihood at iteration {iteration}")]
    EmNonFinite { iteration: usize },

    #[error("invalid hypothesis: {0}")]
    InvalidHypothesis(String),

    #[error("bootstrap covariance A V A^T is singular; rerun with more bootstrap replicates")]
    SingularCovariance,

    #[error("{failed} of {total} replicates failed, above the 5% limit")]
    TooManyFailures { failed: usize, total: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ZipgError {
    /// Short machine-readable tag used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            ZipgError::DimensionMismatch { .. } => "dimension_mismatch",
            ZipgError::InvalidData(_) => "invalid_data",
            ZipgError::Domain { .. } => "domain",
            ZipgError::NonFiniteLikelihood { .. } => "non_finite_likelihood",
            ZipgError::DegenerateTaxon => "degenerate_taxon",
            ZipgError::NonFiniteStart => "non_finite_start",
            ZipgError::EmNonFinite { .. } => "em_non_finite",
            ZipgError::InvalidHypothesis(_) => "invalid_hypothesis",
            ZipgError::SingularCovariance => "singular_covariance",
            ZipgError::TooManyFailures { .. } => "too_many_failures",
            ZipgError::InvalidArgument(_) => "invalid_argument",
            ZipgError::Parse { .. } => "parse",
            ZipgError::Config(_) => "config",
            ZipgError::Io(_) => "io",
            ZipgError::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, ZipgError>;
