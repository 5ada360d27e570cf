use thiserror::Error;

/// Errors raised by the solvers, the geometry layer and the configuration loader.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate map: det J = {det:.3e} at node {node}")]
    DegenerateMap { node: usize, det: f64 },
    #[error("singular jacobian: {0}")]
    SingularJacobian(String),
    #[error("newton did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("singular bordered system: {0}")]
    SingularBordered(String),
    #[error("continuation step failed: {0}")]
    StepFailure(String),
    #[error("degenerate point at s = {s}: {reason}")]
    DegeneratePoint { s: f64, reason: String },
    #[error("no sign change of sigma1 on [{lo}, {hi}]")]
    Bracket { lo: f64, hi: f64 },
    #[error("eigensolver failed: {0}")]
    EigSolverFailure(String),
    #[error("not a fold: |L phi| = {residual:.3e} exceeds {limit:.3e}")]
    NotAFold { residual: f64, limit: f64 },
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error("blow-up at x = {x} (|v| = {value:.3e})")]
    Blowup { x: f64, value: f64 },
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
