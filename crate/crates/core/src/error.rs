use thiserror::Error;

/// Errors surfaced by the simulator, learners and the persistence layer.
#[derive(Debug, Error)]
pub enum PpgtaError {
    #[error("infeasible world spec: {0}")]
    InfeasibleSpec(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("untestable OOI {0}: every ring tile is blocked")]
    UntestableOoi(u32),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: String, reason: String },

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PpgtaError>;
