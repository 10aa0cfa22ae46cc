use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit codes:
/// config/usage -> 1, data -> 2, numerical -> 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },
    #[error("invalid data: {0}")]
    Data(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("training diverged with non-finite loss at epoch {epoch}")]
    Diverged {
        epoch: usize,
        /// Last snapshot taken before the divergence, when checkpointing was on.
        last_state: Option<Box<crate::trainer::TrainState>>,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for this error: 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Shape(_)
            | Error::Parse { .. }
            | Error::Data(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Serde(_) => 2,
            Error::NonFinite(_) | Error::Diverged { .. } => 3,
        }
    }
}
