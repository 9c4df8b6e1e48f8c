use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("linear solver failed to converge (relative residual {residual:.3e})")]
    SolverFailure { residual: f64 },

    #[error("root bracket contains no sign change on [{lo}, {hi}]")]
    NoBracket { lo: f64, hi: f64 },

    #[error("all features were pruned; the encoder is vacuous")]
    AllPruned { gamma: Vec<f64> },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors that originate from numerics rather than from bad input or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular(_)
                | Error::SolverFailure { .. }
                | Error::NoBracket { .. }
                | Error::AllPruned { .. }
                | Error::Numerical(_)
        )
    }
}
