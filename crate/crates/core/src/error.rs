use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("dimension {dim} exceeds the dense-storage limit of {max}")]
    TooLarge { dim: usize, max: usize },

    #[error("matrix is not Hermitian: ||A - A^H||_F = {deviation:e} exceeds {tolerance:e}")]
    NotHermitian { deviation: f64, tolerance: f64 },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("eigendecomposition failed to converge")]
    NoConvergence,

    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),

    #[error("infeasible request: {0}")]
    Infeasible(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("unphysical reduced state in realization {stream} at t = {time}: {detail}")]
    Unphysical { stream: u64, time: f64, detail: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unknown test function `{0}` (expected linear, quadratic, population or constant)")]
    UnknownTestFunction(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad input rather than by the numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::InvalidEnsemble(_)
                | Error::Infeasible(_)
                | Error::UnknownTestFunction(_)
                | Error::TooLarge { .. }
                | Error::Dimension(_)
                | Error::Json(_)
        )
    }
}
