use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite value in {field} at row {row}{}", col.map(|c| format!(", column {c}")).unwrap_or_default())]
    NonFinite {
        field: &'static str,
        row: usize,
        col: Option<usize>,
    },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("exposure must be 0/1 for a logistic exposure model (row {row}: {value})")]
    NonBinaryExposure { row: usize, value: f64 },
    #[error("outcome must be 0/1 for a logistic outcome model (row {row}: {value})")]
    NonBinaryOutcome { row: usize, value: f64 },
    #[error("dimension mismatch: expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{k}-fold cross-validation needs n >= 2k or leave-one-out (n = {n})")]
    FoldTooSmall { n: usize, k: usize },
    #[error("support of size {support} leaves no residual degrees of freedom (n = {n})")]
    SupportTooLarge { support: usize, n: usize },
    #[error("score has zero variance")]
    ZeroVariance,
    #[error("propensity {value} at row {row} is not in (0, 1)")]
    InvalidProbability { row: usize, value: f64 },
    #[error("weights require a logit working model")]
    WrongLink,
    #[error("selected covariate union of size {union} is too large for n = {n}")]
    UnionTooLarge { union: usize, n: usize },
    #[error("design matrix is singular")]
    Singular,
    #[error("outcome model must be continuous for this method")]
    UnsupportedOutcome,
    #[error("solver did not converge: {0}")]
    NoConvergence(String),
}

impl Error {
    /// True for errors caused by the data rather than the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::LengthMismatch(_)
                | Error::NonBinaryExposure { .. }
                | Error::NonBinaryOutcome { .. }
                | Error::DimensionMismatch { .. }
                | Error::InvalidArgument(_)
                | Error::FoldTooSmall { .. }
                | Error::InvalidProbability { .. }
                | Error::UnsupportedOutcome
        )
    }
}
