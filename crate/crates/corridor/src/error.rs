use thiserror::Error;

/// Errors produced by corridor construction, planning and simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid corridor configuration: {0}")]
    InvalidCorridor(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown vehicle id {0}")]
    UnknownVehicle(u64),

    #[error("vehicle {0} already has a committed plan")]
    AlreadyCommitted(u64),

    #[error("degenerate boundary data: {0}")]
    DegenerateBoundary(String),

    #[error("linear system is singular: {0}")]
    SingularSystem(String),

    #[error("constrained solve failed: {0}")]
    ConstrainedSolve(#[from] InfeasibleReport),

    #[error("safety monitor violation at t={t:.3}: {detail}")]
    MonitorViolation { t: f64, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Diagnostic payload for a constrained solve that could not be completed.
///
/// Carries the residual norm of the last Newton iterate so the caller can
/// decide whether to retry with a relaxed schedule.
#[derive(Debug, Error)]
#[error("{reason} (residual {residual:.3e} after {iterations} iterations)")]
pub struct InfeasibleReport {
    pub reason: String,
    pub residual: f64,
    pub iterations: usize,
}

pub type Result<T> = std::result::Result<T, Error>;
