use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the nmfvar library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: {left} vs {right}")]
    DimensionMismatch {
        context: &'static str,
        left: String,
        right: String,
    },

    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("division by zero at entry ({row}, {col}) with eps = 0")]
    DivisionByZero { row: usize, col: usize },

    #[error("did not converge within {iterations} iterations (best estimate {best})")]
    NoConvergence { best: f64, iterations: usize },

    /// A parameter or option is infeasible for the given data.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The data itself violates a precondition (negative values, constant
    /// variable under min-max scaling, ...).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A numeric failure during iteration (NaN, collapsed basis column).
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input file; `row` is the 1-based data row.
    #[error("{path}: row {row}: {detail}")]
    MalformedInput {
        path: String,
        row: usize,
        detail: String,
    },

    #[error("model file error: {0}")]
    Model(String),
}
