use thiserror::Error;

/// Failures raised by the numerical pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("inverse temperature must be finite and positive, got {0}")]
    InvalidBeta(f64),
    #[error("frequency cutoff must be positive")]
    InvalidCutoff,
    #[error("invalid model parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("the static component (ell = 0) is not supported")]
    StaticComponent,
    #[error("bosonic transfer ell = {ell} does not fit in a window of {size} frequencies")]
    EllOutOfWindow { ell: i64, size: usize },
    #[error("singular propagator at m = {m} ({what})")]
    SingularPropagator { m: i64, what: &'static str },
    #[error("vanishing Bethe-Salpeter denominator at m = {m}")]
    SingularVertexDenominator { m: i64 },
    #[error("singular linear system: condition estimate {condition:.3e}")]
    SingularSystem { condition: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("self-consistency did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("bath table line {line}: {reason}")]
    BathTableSyntax { line: usize, reason: String },
    #[error("bath table is missing index m = {0}")]
    MissingIndex(i64),
    #[error("bath table line {line} repeats index m = {m}")]
    DuplicateIndex { line: usize, m: i64 },
    #[error("bath table line {line} has index m = {m} outside the window")]
    IndexOutsideWindow { line: usize, m: i64 },
    #[error("bath violates conjugate symmetry at m = {m} (deviation {deviation:.3e})")]
    SymmetryViolation { m: i64, deviation: f64 },
}

impl Error {
    /// True for failures that come from the numerics rather than from bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularPropagator { .. }
                | Error::SingularVertexDenominator { .. }
                | Error::SingularSystem { .. }
                | Error::NonConvergence { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
