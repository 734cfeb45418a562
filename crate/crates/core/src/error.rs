use thiserror::Error;

/// Errors produced by the bias model, its numeric oracle, calibration and
/// point-cloud correction.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("grazing geometry: beam ray at a = {a} rad with incidence {theta} rad does not reach the plane")]
    GrazingGeometry { a: f64, theta: f64 },

    #[error("quadrature did not converge: estimate {estimate:e}, error bound {error_bound:e}")]
    Quadrature { estimate: f64, error_bound: f64 },

    #[error("waveform maximum lies on the window boundary (sample {index} of {len}); widen the time window")]
    WindowTooNarrow { index: usize, len: usize },

    #[error("no real peak: cubic derivative discriminant {discriminant:e} is negative")]
    NoRealPeak { discriminant: f64 },

    #[error("no critical point of the cubic is a local maximum")]
    BranchSelection,

    #[error("model validity breached: {0}")]
    ModelValidity(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("cloud was already bias-corrected; applying the correction again would over-correct")]
    AlreadyCorrected,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
