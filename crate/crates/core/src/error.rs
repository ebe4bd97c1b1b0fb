use thiserror::Error;

/// Errors raised across the solver pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    /// theta_xi vanishes at exactly one of mu and the reference: no norm equivalence.
    #[error("parameter incompatibility: coefficient {component} vanishes at only one of {mu} and {reference}")]
    ParameterIncompatible {
        component: usize,
        mu: f64,
        reference: f64,
    },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("solver did not converge at step {step}: relative residual {residual:.3e}")]
    NonConvergence { step: usize, residual: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Input(_)
            | Error::Data(_)
            | Error::Parameter(_)
            | Error::ParameterIncompatible { .. }
            | Error::Unsupported(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
