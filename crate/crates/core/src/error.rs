use thiserror::Error;

/// Errors raised by model construction, simulation and the exact oracle.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid kernel: {0}")]
    Kernel(String),
    #[error("invalid walk model: {0}")]
    Walk(String),
    #[error("state does not match geometry: expected {expected} sites, got {got}")]
    GeometryMismatch { expected: usize, got: usize },
    #[error("offset radius {radius} is not below half the torus side {side}")]
    WrapAmbiguity { radius: i64, side: usize },
    #[error("state space of {states} configurations exceeds the cap of {cap}")]
    StateCap { states: u128, cap: usize },
    #[error("iteration did not converge after {iterations} steps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("stationary law is not unique: second eigenvalue modulus {modulus}")]
    NotUnique { modulus: f64 },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
