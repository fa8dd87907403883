//! Crate-wide error type.

use thiserror::Error;

/// Everything that can go wrong in a run, from bad config keys to a
/// positivity loss inside the explicit integrator.
#[derive(Debug, Error)]
pub enum Error {
    /// Inputs outside the validity domain of an operation (non-finite
    /// values, non-positive temperature, and the like).
    #[error("domain error: {0}")]
    Domain(String),

    /// The hypothesis of thermodynamic stability (p_rho > 0, e_theta > 0)
    /// failed at the requested state.
    #[error("thermodynamic stability violated: {0}")]
    Stability(String),

    /// A structural requirement on the equation of state failed
    /// (monotonicity of P, conductivity exponent, coefficient ranges).
    #[error("invalid equation of state: {0}")]
    InvalidEos(String),

    /// An iterative linear solve did not reach its tolerance within the
    /// iteration cap.
    #[error("linear solver did not converge: {0}")]
    SolverDiverged(String),

    /// Scaling parameter too large for the chosen data (e.g. rho0 <= 0
    /// in the well-prepared construction).
    #[error("invalid scaling: {0}")]
    InvalidScaling(String),

    /// Density or temperature left the positive cone during time stepping.
    #[error("positivity loss: {0}")]
    Positivity(String),

    /// A CFL or step-size restriction was violated.
    #[error("CFL violation: {0}")]
    Cfl(String),

    /// Configuration file is malformed or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// Grids of two runs that must be compared do not match.
    #[error("configuration mismatch: {0}")]
    GridMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 for validation problems,
    /// 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidEos(_) | Error::GridMismatch(_) => 2,
            Error::Domain(_) | Error::Stability(_) | Error::InvalidScaling(_) => 2,
            Error::SolverDiverged(_) | Error::Positivity(_) | Error::Cfl(_) => 3,
            Error::Io(_) => 3,
        }
    }
}
