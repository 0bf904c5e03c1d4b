use thiserror::Error;

/// Errors raised by the thermodynamics, solver and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A quantity that must be strictly positive was not.
    #[error("domain error: {what} = {value} must be positive")]
    Domain { what: &'static str, value: f64 },

    /// Temperature recovery from conserved variables has no real root.
    #[error("unphysical state: {0}")]
    Unphysical(String),

    /// The dissipative entropy weight (1 - 1/(2 theta)) is not positive.
    #[error("theta = {0} is outside the convexity window theta > 1/2")]
    ConvexityWindow(f64),

    /// A state left the configured admissible box during a run.
    #[error("inadmissible state at cell {cell}: {reason}")]
    Inadmissible { cell: usize, reason: String },

    /// A requested time step exceeds the stability limit.
    #[error("step rejected: dt = {dt:e} exceeds the stable limit {limit:e}")]
    StepRejected { dt: f64, limit: f64 },

    #[error("invalid parameters: {0}")]
    Params(String),

    /// Aggregated configuration errors, one entry per offending path.
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
