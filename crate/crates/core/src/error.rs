use std::path::PathBuf;

use thiserror::Error;

/// Every fault the library can report.
///
/// Constraint violations inside a simulation step are *data* (see
/// [`crate::env::FeasibilityReport`]), never an `Error`.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config file not found: {}", .0.display())]
    ConfigMissing(PathBuf),

    #[error("config schema violation at `{key}`: {message}")]
    ConfigSchema { key: String, message: String },

    #[error("config range violation: {0}")]
    ConfigRange(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unstable queue: arrival rate {arrival} >= service capacity {capacity}")]
    UnstableQueue { arrival: f64, capacity: f64 },

    #[error("decision has no active route")]
    NoActiveRoute,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("backward pass requested without a forward cache")]
    MissingCache,

    #[error("forward cache is stale: parameters changed since the forward pass")]
    StaleCache,

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty rating list for an active decision")]
    EmptyRatings,

    #[error("no feasible price on the grid")]
    NoFeasiblePrice,

    #[error("infeasible game: {0}")]
    InfeasibleGame(String),

    #[error("episode is over: step {step} of {limit}")]
    EpisodeOver { step: usize, limit: usize },

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for faults caused by the experiment configuration rather than the run itself.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::ConfigMissing(_) | Error::ConfigSchema { .. } | Error::ConfigRange(_))
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
