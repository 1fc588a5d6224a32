use thiserror::Error;

/// Errors raised anywhere in the simulator, fitting, or I/O layers.
#[derive(Debug, Error)]
pub enum DptError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("operator is not Hermitian (relative asymmetry {0:.3e})")]
    NotHermitian(f64),

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("truncation tail mass {tail:.3e} exceeds {epsilon:.1e} at n_max={n_max}")]
    Truncation { tail: f64, epsilon: f64, n_max: usize },

    #[error("diverging phonon number: cutoff ceiling n_max={ceiling} exceeded")]
    Diverging { ceiling: usize },

    #[error("integrator unstable: trace drift {drift:.3e} after {elapsed:.3} us")]
    Unstable { drift: f64, elapsed: f64 },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DptError>;
