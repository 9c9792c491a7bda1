use thiserror::Error;

/// Errors raised by the simulator, the drift checks and the PDE solver.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("flow explodes at t = {explosion_time:.6e} (requested t = {requested:.6e})")]
    FlowExplosion { explosion_time: f64, requested: f64 },

    #[error("model inconsistency: {0}")]
    ModelInconsistency(String),

    #[error("degenerate kernel: {0}")]
    DegenerateKernel(String),

    #[error("infinite result: {0}")]
    InfiniteResult(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("CFL violation: dt = {dt:.3e} exceeds the maximal stable step {max_stable_dt:.3e}")]
    Cfl { dt: f64, max_stable_dt: f64 },

    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("tail window: {0}")]
    Window(String),

    #[error("refused: {0}")]
    Refused(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Refused(_) | Error::InvalidModel(_) | Error::ModelInconsistency(_) => 2,
            Error::Config(_) | Error::Domain(_) => 1,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
