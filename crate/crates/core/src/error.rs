use thiserror::Error;

/// Errors raised by the simulation and solver layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("time step violates stability bound: {0}")]
    Cfl(String),
    #[error("could not place {requested} non-overlapping agents in the pen after {attempts} attempts")]
    Packing { requested: usize, attempts: usize },
    #[error("source iteration did not converge within {iterations} iterations (last relative update {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("turning rate must stay positive; found {rate} at x = {x}, theta = {theta}")]
    NonPositiveRate { rate: f64, x: f64, theta: f64 },
    #[error("empty sample")]
    EmptySample,
    #[error("exponential tail fit is degenerate: {0}")]
    DegenerateFit(String),
}

impl Error {
    /// Stable machine-readable name used in CLI summaries.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::Config(_) => "ConfigError",
            Error::Cfl(_) => "CflError",
            Error::Packing { .. } => "PackingError",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::NonPositiveRate { .. } => "NonPositiveRate",
            Error::EmptySample => "EmptySample",
            Error::DegenerateFit(_) => "DegenerateFit",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
