use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A workload, architecture or experiment description is malformed.
    #[error("configuration error: {0}")]
    Config(String),

    /// An architecture failed one or more structural rules.
    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    /// No feasible mapping exists for an operation on a sub-accelerator.
    #[error("op `{op}` is unmappable on `{unit}`: {reason}")]
    Unmappable {
        op: String,
        unit: String,
        reason: String,
    },

    #[error("unknown sub-accelerator `{0}`")]
    UnknownUnit(String),

    #[error("scheduling error: {0}")]
    Schedule(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
