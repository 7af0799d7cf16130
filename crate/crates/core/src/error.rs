use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("weights must be nonnegative (index {index} has {value})")]
    NegativeWeight { index: usize, value: f64 },

    #[error("weights sum to {0}, expected 1")]
    NotNormalized(f64),

    #[error("empty measure")]
    EmptyMeasure,

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("mass mismatch: {0} vs {1}")]
    MassMismatch(f64, f64),

    #[error("problem size {rows}x{cols} exceeds the exact solver cap {cap}x{cap}")]
    SizeCapExceeded { rows: usize, cols: usize, cap: usize },

    #[error("sinkhorn did not converge in {iterations} iterations (marginal residual {residual:e})")]
    SinkhornNotConverged { iterations: usize, residual: f64 },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("torus solvability requires mean density 1, got {0}")]
    NonNeutral(f64),

    #[error("right-hand side must have zero mean, got {0}")]
    NonZeroMean(f64),

    #[error("kinetic alternation did not converge after {iterations} iterations; trace: {trace:?}")]
    AlternationNotConverged { iterations: usize, trace: Vec<f64> },

    #[error("simulation: {0}")]
    Simulation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
