use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tool specification: {0}")]
    InvalidTool(String),

    #[error("invalid process specification: {0}")]
    InvalidProcess(String),

    #[error("width of cut {a_e} mm exceeds tool diameter {diameter} mm")]
    WidthExceedsDiameter { a_e: f64, diameter: f64 },

    #[error("chip thickness must be positive, got {0}")]
    NonPositiveChip(f64),

    #[error("no engaged disk in the sample")]
    Disengaged,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("innovation covariance is singular even after jitter")]
    SingularInnovation,

    #[error("estimator diverged at sample {sample}: {reason}")]
    Divergence { sample: usize, reason: String },

    #[error("malformed CSV at line {line}: {reason}")]
    Csv { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
