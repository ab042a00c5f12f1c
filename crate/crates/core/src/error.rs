use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("argument {value} outside supported range for {what}")]
    OutOfRange { what: &'static str, value: f64 },

    #[error("pole of the Gamma function at {0}")]
    GammaPole(f64),

    #[error("quadrature did not converge: estimate {estimate:e}, error {error:e} after {subdivisions} subdivisions")]
    QuadratureFailed {
        estimate: f64,
        error: f64,
        subdivisions: usize,
    },

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("ordering violated: {0}")]
    Ordering(String),

    #[error("tail integral not certifiable: {0}")]
    TailNotCertifiable(String),

    #[error("metric degenerates at z = {z}: {detail}")]
    Degenerate { z: f64, detail: String },

    #[error("declared order {delta} admits no convergent choice of integration limits")]
    NoConvergentLimits { delta: f64 },

    #[error("source not integrable against the volume form: fitted order {order}")]
    NotIntegrable { order: f64 },

    #[error("fit window too short: {points} points (need {needed})")]
    FitTooShort { points: usize, needed: usize },

    #[error("aliasing: {0}")]
    Aliasing(String),

    #[error("spectral tail not convergent: {0}")]
    TailNotConvergent(String),

    #[error("Newton damping exhausted at iteration {iteration}: residual {residual:e}")]
    DampingExhausted { iteration: usize, residual: f64 },

    #[error("Newton did not converge in {iterations} iterations: residual {residual:e}")]
    NewtonNotConverged { iterations: usize, residual: f64 },

    #[error("singular linear system at row {0}")]
    Singular(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
