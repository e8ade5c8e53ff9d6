use thiserror::Error;

/// Errors surfaced by model construction, fitting, and scoring.
#[derive(Debug, Error)]
pub enum Error {
    /// A mean or argument fell on or outside its valid domain
    /// (e.g. μ = 0 for the logit link).
    #[error("domain error in {context}: value {value} outside {domain}")]
    Domain {
        context: &'static str,
        value: f64,
        domain: &'static str,
    },

    /// A response value is outside the support of the chosen family.
    #[error("response {value} at row {row} is not in the support of the {family} family")]
    Support {
        family: &'static str,
        value: f64,
        row: usize,
    },

    /// Problems with the input data (missing columns, bad arm codes, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Configuration could not be parsed or is inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// A matrix that must be positive definite stayed singular after jitter.
    #[error("{what} is singular (even after jitter)")]
    Singular { what: &'static str },

    /// A vector that must have unit norm does not.
    #[error("expected a unit vector in {context}, got norm {norm}")]
    NotUnit { context: &'static str, norm: f64 },

    /// The smoother trace meets or exceeds n at every grid point.
    #[error("GCV failed: effective degrees of freedom >= n over the whole grid")]
    Saturated,

    /// Knot sequence is not strictly increasing or too short.
    #[error("invalid knots: {0}")]
    InvalidKnots(String),

    /// An operation that needs stored draws received none.
    #[error("no posterior draws available")]
    EmptyDraws,

    /// Archive (de)serialization failure.
    #[error("archive error: {0}")]
    Archive(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
