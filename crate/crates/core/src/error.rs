use thiserror::Error;

/// Errors produced by the scheduling library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value at t={time} for source {src}: {value}")]
    NonFinite { time: i64, src: usize, value: f64 },

    #[error("nonstationary source {src}: a^2 = {a_squared} >= 1")]
    Nonstationary { src: usize, a_squared: f64 },

    #[error("unbounded entropy: source {src} has no retained content and a^2 >= 1")]
    UnboundedEntropy { src: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("insufficient samples for source {src} at ages {ages:?}")]
    InsufficientSamples { src: usize, ages: Vec<usize> },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("non-finite penalty value at age {delta}")]
    NonFinitePenalty { delta: usize },

    #[error("value iteration did not converge after {sweeps} sweeps (residual {residual:e})")]
    NotConverged { sweeps: usize, residual: f64 },

    #[error("state space too large: {states} states exceeds limit {limit}")]
    StateSpaceTooLarge { states: u128, limit: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
