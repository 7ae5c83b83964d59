use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension for {what}: {value}")]
    InvalidDimension { what: &'static str, value: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid rank {r}: must satisfy 1 <= r <= {max}")]
    InvalidRank { r: usize, max: usize },

    #[error("dispersion matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("dispersion matrix is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    /// The averaged second-order moment is indistinguishable from zero, which
    /// is what happens when every link is linear.
    #[error(
        "near-zero-matrix: second-order moment is indistinguishable from zero \
         (largest |eigenvalue| {max_abs_eigenvalue:e}, Frobenius norm {frobenius:e}, standard error {standard_error:e})"
    )]
    NearZeroMatrix {
        max_abs_eigenvalue: f64,
        frobenius: f64,
        standard_error: f64,
    },

    #[error("reference row {row} has zero norm")]
    ZeroReferenceRow { row: usize },

    #[error("split oversubscribed: requested {requested} samples but only {available} exist")]
    Oversubscribed { requested: usize, available: usize },

    #[error("{0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// Short machine-readable tag, used in result records and CLI diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidDimension { .. } => "invalid-dimension",
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::ShapeMismatch { .. } => "shape-mismatch",
            Error::InvalidRank { .. } => "invalid-rank",
            Error::NotPositiveDefinite { .. } => "not-positive-definite",
            Error::NotSymmetric { .. } => "not-symmetric",
            Error::NearZeroMatrix { .. } => "near-zero-matrix",
            Error::ZeroReferenceRow { .. } => "zero-reference-row",
            Error::Oversubscribed { .. } => "oversubscribed",
            Error::Config(_) => "config",
            Error::Numerical(_) => "numerical",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
