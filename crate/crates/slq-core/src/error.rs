//! Error type shared by all modules.

/// Errors produced by construction, simulation, and solver routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration or construction arguments.
    #[error("configuration error: {0}")]
    Config(String),

    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A standing assumption on the problem data fails (sign conditions,
    /// boundedness); downstream solvers are not well posed.
    #[error("assumption violated: {0}")]
    Assumption(String),

    /// The control weight K = R + D*PD lost strict positive definiteness.
    #[error("singular K: {0}")]
    SingularK(String),

    /// Backward solver failure (non-finite driver, rank collapse).
    #[error("solver error: {0}")]
    Solver(String),

    /// Forward simulation failure (non-finite state).
    #[error("simulation error: {0}")]
    Simulation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
