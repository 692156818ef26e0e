//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by solvers, builders, and the benchmark harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parameter index {index} out of range for parameter vector of length {len}")]
    ParamIndex { index: usize, len: usize },

    #[error("Newton failed to converge at step {step}: residual {residual:.3e} after {iterations} iterations")]
    NonConvergence {
        step: usize,
        residual: f64,
        iterations: usize,
    },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("ill-conditioned reduced system: condition estimate {0:.3e} exceeds 1e14")]
    IllConditioned(f64),

    #[error("memory guard: {what} needs {entries} entries, cap is {cap}")]
    MemoryCap {
        what: String,
        entries: usize,
        cap: usize,
    },

    #[error("NNLS did not reach tolerance {eps:.3e}: achieved ratio {achieved:.3e} after {iterations} iterations")]
    NnlsStalled {
        eps: f64,
        achieved: f64,
        iterations: usize,
    },

    #[error("insufficient snapshots: requested {requested}, available {available}")]
    InsufficientSnapshots { requested: usize, available: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file {path}: {detail}")]
    Format { path: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
