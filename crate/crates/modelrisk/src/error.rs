use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("support violation: mass at node {node} where the reference measure vanishes")]
    SupportViolation { node: usize },

    #[error("numerical overflow in exponential tilt (pathological multipliers)")]
    NumericalOverflow,

    #[error("grid too narrow: truncated probability mass {mass:.3e} exceeds {limit:.1e}")]
    GridTooNarrow { mass: f64, limit: f64 },

    #[error("transform truncation error: {0}")]
    TruncationError(String),

    #[error("quadrature failed to converge: {0}")]
    QuadratureFailure(String),

    #[error("price {price} outside no-arbitrage bounds [{lower}, {upper}]")]
    NoArbitrageViolation { price: f64, lower: f64, upper: f64 },

    #[error("price bands are infeasible on this grid: worst violation {violation:.3e} (instrument {instrument})")]
    Infeasible { violation: f64, instrument: usize },

    #[error("solver hit the iteration limit: {0}")]
    MaxIterations(String),

    #[error("insufficient quotes: have {have}, need {need}")]
    InsufficientQuotes { have: usize, need: usize },

    #[error("parameter fit diverged: {0}")]
    FitDiverged(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
