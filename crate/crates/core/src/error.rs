use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A model parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// An input state is internally inconsistent (e.g. degree sums).
    #[error("structural error: {0}")]
    Structural(String),

    /// The operation is not defined for these parameters.
    #[error("outside domain: {0}")]
    Domain(String),

    #[error("graph too large for exact enumeration: n = {n} > {max}; use the spectral bound instead")]
    TooLarge { n: usize, max: usize },

    #[error("{method} did not converge after {iterations} iterations (last iterates {last:?})")]
    NonConvergence {
        method: &'static str,
        iterations: usize,
        last: [f64; 2],
    },

    #[error("quadrature did not reach tolerance {tol:e} (error estimate {estimate:e})")]
    Quadrature { tol: f64, estimate: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
