use thiserror::Error;

pub type Result<T> = std::result::Result<T, RcwaError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RcwaError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("slice mesh breakpoints must be strictly increasing (index {index})")]
    NonMonotoneMesh { index: usize },

    #[error("slice mesh spans [{low}, {high}] but the domain is [{expected_low}, {expected_high}]")]
    MeshDomainMismatch { low: f64, high: f64, expected_low: f64, expected_high: f64 },

    #[error("incidence constant alpha0 has imaginary part {imag:e} (real part {real:e}); eps_plus must be (nearly) real for oblique incidence")]
    ComplexBlochPhase { real: f64, imag: f64 },

    #[error("permittivity vanishes on [{start}, {end}] nm; 1/eps is undefined")]
    ZeroPermittivity { start: f64, end: f64 },

    #[error("need Fourier coefficients up to order {needed}, have {available}")]
    InsufficientCoefficients { needed: usize, available: usize },

    #[error("Toeplitz factor of slice {slice:?} is singular (condition estimate {condition:e})")]
    SingularToeplitz { slice: Option<usize>, condition: f64 },

    #[error("eigensolver failed to converge for slice {slice:?}")]
    EigenNotConverged { slice: Option<usize> },

    #[error("interface matrix of slice {slice:?} is singular: {reason}")]
    SingularInterface { slice: Option<usize>, reason: String },

    #[error("star product round-trip block is near-singular (condition estimate {condition:e})")]
    Resonance { condition: f64 },

    #[error("point x2 = {x2} lies outside [{low}, {high}]")]
    OutOfRange { x2: f64, low: f64, high: f64 },

    #[error("dense oracle refused: {0}")]
    OracleRefused(String),

    #[error("solutions describe different problems: {0}")]
    GeometryMismatch(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
}

impl RcwaError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Self::InvalidParameter { name, reason: reason.into() }
    }

    /// Attach a slice index to errors that carry one.
    pub fn at_slice(self, index: usize) -> Self {
        match self {
            Self::SingularToeplitz { condition, .. } => {
                Self::SingularToeplitz { slice: Some(index), condition }
            }
            Self::EigenNotConverged { .. } => Self::EigenNotConverged { slice: Some(index) },
            Self::SingularInterface { reason, .. } => {
                Self::SingularInterface { slice: Some(index), reason }
            }
            other => other,
        }
    }
}
