use thiserror::Error;

/// Errors produced anywhere in the quantification pipeline.
#[derive(Debug, Error)]
pub enum UqError {
    /// An argument lies outside the support or parameter space of a distribution.
    #[error("domain error: {0}")]
    Domain(String),
    /// A data point or parameter was not a finite number.
    #[error("invalid input: {0}")]
    Input(String),
    /// The call violated an API contract (ordering, family mismatch, missing data).
    #[error("usage error: {0}")]
    Usage(String),
    /// Importance weights summed to zero (or were otherwise unusable).
    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("simulation failed: {0}")]
    Simulation(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("snapshot format: {0}")]
    Snapshot(String),
}

pub type Result<T, E = UqError> = std::result::Result<T, E>;
