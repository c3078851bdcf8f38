use thiserror::Error;

/// Errors raised by the geometry, integration and verification layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A hyperspherical chart was evaluated where `sin θ^j` (j < k) is below the guard.
    #[error("chart degenerate: sin(theta^{index}) = {sine:e} is below the chart guard")]
    ChartDegenerate { index: usize, sine: f64 },

    #[error("constraint violated on segment {segment}: |psi| = {residual:e}")]
    ConstraintViolated { segment: usize, residual: f64 },

    #[error("step rejected at t = {t}: constraint drift {drift:e} exceeds {limit:e}")]
    StepRejected { t: f64, drift: f64, limit: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("field {0} cannot be evaluated in this representation")]
    FieldUnavailable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
