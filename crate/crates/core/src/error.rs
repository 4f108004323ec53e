use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("matrix is not symmetric: max |a_ij - a_ji| = {max_diff:e}")]
    Asymmetric { max_diff: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: String,
        reason: String,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("zero dispersion: {0}")]
    ZeroDispersion(String),

    #[error(
        "branch cut collision: factor `{factor}` evaluates to {value} on the negative real axis"
    )]
    BranchCut { factor: &'static str, value: String },

    #[error("solver did not converge after {iterations} iterations (last residual {residual:e}) at z = {at}")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        at: String,
    },

    #[error("no sign change of {what} found on [{lo:e}, {hi:e}]")]
    Bracketing {
        what: &'static str,
        lo: f64,
        hi: f64,
    },

    #[error("calibration failed for every candidate: {0}")]
    CalibrationFailed(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("backtest window {window} failed: {source}")]
    Window {
        window: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub(crate) fn invalid(
        name: &'static str,
        value: impl ToString,
        reason: impl Into<String>,
    ) -> Self {
        Error::InvalidParameter {
            name,
            value: value.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
        }
    }

    pub(crate) fn mismatch(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            actual,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidParameter { .. } => ErrorCategory::Config,
            Error::NonFinite { .. }
            | Error::Asymmetric { .. }
            | Error::DimensionMismatch { .. }
            | Error::InsufficientData(_)
            | Error::ZeroDispersion(_)
            | Error::Parse { .. }
            | Error::Io(_) => ErrorCategory::Data,
            Error::NotPositiveDefinite
            | Error::BranchCut { .. }
            | Error::NonConvergence { .. }
            | Error::Bracketing { .. }
            | Error::CalibrationFailed(_) => ErrorCategory::Numerical,
            Error::Window { source, .. } => source.category(),
        }
    }
}
