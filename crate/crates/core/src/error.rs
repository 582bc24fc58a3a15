use std::path::PathBuf;

/// Errors raised by the simulator library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid channel config: {0}")]
    InvalidConfig(String),

    #[error("invalid gain distribution: {0}")]
    InvalidDistribution(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("diffusion step {step} out of range 1..={max}")]
    StepOutOfRange { step: usize, max: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    TrainingDiverged { epoch: usize, loss: f64 },

    #[error("nonpositive uniform rate {0}")]
    NonPositiveBaseline(f64),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("checkpoint schema error: {0}")]
    Schema(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config parse error: {0}")]
    ConfigParse(#[from] toml::de::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
