use thiserror::Error;

/// Errors produced by sheaf construction, diffusion, and spectral routines.
#[derive(Debug, Error)]
pub enum SheafError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no potential registered for edge {0}-{1}")]
    MissingPotential(usize, usize),

    #[error("missing neighbor value for vertex {0} (neighbor {1})")]
    MissingNeighbor(usize, usize),

    #[error("step size {gamma} diverged: energy increased on {streak} consecutive steps")]
    StepSize { gamma: f64, streak: usize },

    #[error("generator failed: {0}")]
    Generator(String),

    #[error("spectral quantity unavailable: {0}")]
    Spectral(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SheafError>;
