use thiserror::Error;

/// Errors raised by the solvers and the kernel containers.
#[derive(Debug, Error)]
pub enum DmftError {
    #[error("symmetric factorization failed (jitter ceiling {jitter:e} reached on a {dim}x{dim} covariance)")]
    FactorizationFailure { dim: usize, jitter: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value encountered in {context}")]
    NonFiniteValue { context: String },

    #[error("alignment is undefined for a zero-norm kernel")]
    ZeroNorm,

    #[error("at least {required} Monte-Carlo samples are required, got {got}")]
    InsufficientSamples { required: usize, got: usize },

    #[error("linear system is singular: {0}")]
    SingularSystem(String),

    #[error("resolvent (I - gamma0^2 C D) is not invertible in layer {layer}; reduce dt or gamma0")]
    SingularResolvent { layer: usize },

    #[error("quadrature underflow: variance {variance:e} is negative beyond tolerance")]
    QuadratureUnderflow { variance: f64 },

    #[error("training log has no checkpoint data for {0}")]
    MissingCheckpoint(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("input gram is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NonPsdGram { min_eigenvalue: f64 },

    #[error("malformed kernel file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DmftError>;

pub(crate) fn ensure_finite(values: &[f64], context: impl FnOnce() -> String) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(DmftError::NonFiniteValue { context: context() })
    }
}
