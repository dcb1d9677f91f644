use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    /// Every schema violation found in a configuration document, one per line.
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Schema(Vec<String>),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("training diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: u64, detail: String },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("missing run artifacts: {}", .0.join(", "))]
    MissingArtifacts(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Schema(_))
    }
}
