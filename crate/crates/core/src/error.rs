use thiserror::Error;

/// Errors raised anywhere in the fingerprinting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    #[error("invalid profile: {0}")]
    InvalidProfile(String),

    #[error("impairment produced non-finite output: {0}")]
    NonFiniteOutput(String),

    #[error("cannot place {count} profiles with minimum separation {separation}")]
    InfeasibleSeparation { count: usize, separation: f64 },

    #[error("no packet detected (peak metric {peak:.3} below threshold {threshold:.3})")]
    NoPacket { peak: f64, threshold: f64 },

    #[error("reference bin {0} has zero energy")]
    ZeroReferenceBin(usize),

    #[error("unsupported resampling ratio {from} -> {to}")]
    IrrationalRatio { from: f64, to: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("backward called without a recorded forward pass")]
    NoForward,

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
