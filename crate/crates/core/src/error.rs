use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("Lagrangian returned a negative value {value} at x = {x}")]
    NegativeLagrangian { value: f64, x: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("x = {x} outside the domain [{a}, {b}]")]
    OutOfDomain { x: f64, a: f64, b: f64 },

    #[error("difference quotient step must be nonzero")]
    ZeroStep,

    #[error("empty subinterval ({alpha}, {beta})")]
    EmptyInterval { alpha: f64, beta: f64 },

    #[error("invalid weights: {0}")]
    BadWeights(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("grid is not uniform")]
    NonUniformGrid,

    #[error("too few elements: need at least {needed}, got {got}")]
    TooFewElements { needed: usize, got: usize },

    #[error("invalid boundary-layer width: {0}")]
    BadDelta(String),

    #[error("grid too coarse: no node within a layer of width {delta}")]
    GridTooCoarse { delta: f64 },

    #[error("need at least {needed} entries, got {got}")]
    TooFewEntries { needed: usize, got: usize },

    #[error("invalid options: {0}")]
    InvalidOptions(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub(crate) fn ensure_finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}
