use thiserror::Error;

use crate::nonlinear::PicardTrace;

pub type Result<T> = std::result::Result<T, Error>;

/// Failures surfaced by the numerical modules. The `module` string on the
/// generic variants names where the failure originated.
#[derive(Debug, Error)]
pub enum Error {
    #[error("symbol: resolvent is singular at lambda = {re} + {im}i, |zeta|^2 = {zeta_sq}")]
    SingularResolvent { re: f64, im: f64, zeta_sq: f64 },

    #[error("symbol: holomorphic calculus is undefined at zeta = 0")]
    DegenerateSymbol,

    #[error("{module}: shape mismatch (expected {expected:?}, got {actual:?})")]
    ShapeMismatch {
        module: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("grid: zero frequency carries nonzero coefficient {magnitude:e}")]
    ZeroModeNotInvertible { magnitude: f64 },

    #[error("extension: field value {value:e} on reflection plane of axis {axis} violates Dirichlet data")]
    BoundaryViolation { axis: usize, value: f64 },

    #[error("linear: forcing has zero norm")]
    ZeroForcing,

    #[error("nonlinear: Picard iteration failed to converge (window shrank below one step)")]
    NoConvergence { trace: Box<PicardTrace> },

    #[error("nonlinear: only {found} modes above the noise floor, need {needed}")]
    InsufficientBand { found: usize, needed: usize },

    #[error("multiplier: index {index:?} missing from symbol table")]
    MissingIndex { index: Vec<i64> },

    #[error("multiplier: non-finite symbol value at lambda = {re} + {im}i, zeta = {zeta:?}")]
    NonFiniteValue { re: f64, im: f64, zeta: Vec<f64> },

    #[error("multiplier: Rademacher denominator {value:e} is degenerate")]
    DegenerateDenominator { value: f64 },

    #[error("multiplier: precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("{module}: invalid input: {message}")]
    InvalidInput {
        module: &'static str,
        message: String,
    },

    #[error("{module}: numerical failure: {message}")]
    NumericalFailure {
        module: &'static str,
        message: String,
    },

    #[error("config: {0}")]
    ConfigInvalid(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(module: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidInput {
            module,
            message: message.into(),
        }
    }

    pub(crate) fn shape(module: &'static str, expected: &[usize], actual: &[usize]) -> Self {
        Error::ShapeMismatch {
            module,
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    /// True for errors caused by bad user input rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::ConfigInvalid(_)
                | Error::InvalidInput { .. }
                | Error::ShapeMismatch { .. }
                | Error::PreconditionViolated(_)
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}
