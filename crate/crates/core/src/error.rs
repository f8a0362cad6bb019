//! Shared error type for the library.

/// Errors raised by solvers, kinematics, task encoding and the controller.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("cost matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("constraints certify an empty feasible region")]
    Infeasible,

    #[error("active-set iteration limit of {limit} exceeded")]
    IterationLimit { limit: usize },

    #[error("{count} constraints exceed the exhaustive solver cap of {max}")]
    TooManyConstraints { count: usize, max: usize },

    #[error("observed point is behind the camera (depth {depth:.3e} m)")]
    BehindCamera { depth: f64 },

    #[error("priority order contains a cycle through task {task}")]
    CyclicOrder { task: usize },

    #[error("task index {index} out of range for {len} tasks")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
