use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    /// An input lies outside the domain of a formula (e.g. `gamma >= 1`).
    #[error("domain error: {0}")]
    Domain(String),

    /// A bracketed solver ran out of iterations before meeting its tolerance.
    #[error("solver failed after {iterations} iterations, last bracket [{lo}, {hi}]")]
    SolverFailure { lo: f64, hi: f64, iterations: usize },

    #[error(
        "tail fit needs at least {required} positive grid points in the window, found {found}"
    )]
    InsufficientSupport { found: usize, required: usize },

    #[error("{found} live agents, at least {required} required")]
    TooFewAgents { found: usize, required: usize },

    #[error("elite set has {size} agents, at least {required} required")]
    InsufficientElite { size: usize, required: usize },

    #[error("snapshot retention needs {required} bytes, budget is {budget}")]
    ResourceLimit { required: u64, budget: u64 },

    #[error("round {0} was not recorded as a snapshot")]
    MissingSnapshot(u64),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("schema check failed for {path}: {reason}")]
    Schema { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParams(_) => "invalid_params",
            Error::Domain(_) => "domain",
            Error::SolverFailure { .. } => "solver_failure",
            Error::InsufficientSupport { .. } => "insufficient_support",
            Error::TooFewAgents { .. } => "too_few_agents",
            Error::InsufficientElite { .. } => "insufficient_elite",
            Error::ResourceLimit { .. } => "resource_limit",
            Error::MissingSnapshot(_) => "missing_snapshot",
            Error::InvalidGrid(_) => "invalid_grid",
            Error::Config(_) => "config",
            Error::Schema { .. } => "schema",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
