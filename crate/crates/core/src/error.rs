use thiserror::Error;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("leading coefficient is singular (smallest singular value {min_sv:.3e})")]
    SingularLeading { min_sv: f64 },

    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),

    #[error("eigenvalue collision at {location}: gap {gap:.3e} below threshold {threshold:.3e}")]
    EigenvalueCollision {
        location: String,
        gap: f64,
        threshold: f64,
    },

    #[error("eigenvector normalization is singular at {location} (|v^T eta v| = {value:.3e})")]
    NormalizationSingular { location: String, value: f64 },

    #[error("path inconsistency: two integration orders differ by {deviation:.3e}")]
    PathInconsistency { deviation: f64 },

    #[error("point {0} lies outside the sampled domain")]
    OutsideDomain(String),

    #[error("consistency violation at order {order}: residual {residual:.3e} exceeds {tolerance:.3e}")]
    ConsistencyViolation {
        order: i32,
        residual: f64,
        tolerance: f64,
    },

    #[error("eigenframe does not close around the loop: {0}")]
    MonodromyMismatch(String),

    #[error("truncation order {have} too small, need at least {need}")]
    WindowTooSmall { need: i32, have: i32 },

    #[error("loop data not smooth enough: spectral tail ratio {ratio:.3e}")]
    NotSmooth { ratio: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("flow aborted at t = {t}: {source}")]
    FlowAborted { t: f64, source: Box<Error> },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Whether the error stems from a configuration problem rather than numerics.
    pub fn is_config(&self) -> bool {
        match self {
            Error::UnknownFixture(_) | Error::InvalidConfig(_) | Error::WindowTooSmall { .. } => true,
            Error::FlowAborted { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
