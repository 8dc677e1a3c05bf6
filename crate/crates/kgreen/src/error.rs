use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("singular argument: {0}")]
    Singular(String),
    #[error("spectral gap: {0}")]
    SpectralGap(String),
    #[error("branch tracking: {0}")]
    Branch(String),
    #[error("resource limit: {0}")]
    Resource(String),
    #[error("Picard iteration diverged (contraction ratio {ratio:.3e})")]
    Divergence { ratio: f64 },
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("cache mismatch: {0}")]
    CacheMismatch(String),
    #[error("linear algebra: {0}")]
    LinAlg(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
