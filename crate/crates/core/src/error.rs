use std::path::PathBuf;

/// Errors produced by this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("head {head} out of range ({num_heads} heads)")]
    HeadOutOfRange { head: usize, num_heads: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("goal id {goal_id} is out of range for {family}")]
    GoalOutOfRange { family: &'static str, goal_id: u32 },

    #[error("episode already finished; call reset first")]
    EpisodeDone,

    #[error("action {action} out of range ({num_actions} actions)")]
    ActionOutOfRange { action: usize, num_actions: usize },

    #[error("replay buffer holds {len} transitions, {requested} requested")]
    Underfull { len: usize, requested: usize },

    #[error("config error at line {line}: {message}")]
    ConfigLine { line: usize, message: String },

    #[error("config error in field `{field}`: {message}")]
    ConfigField { field: String, message: String },

    #[error("unseen seed {0} overlaps the training set")]
    SeedOverlap(u64),

    #[error("bad binary format: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that stem from a bad configuration rather than a runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::ConfigLine { .. }
                | Error::ConfigField { .. }
                | Error::InvalidSpec(_)
                | Error::GoalOutOfRange { .. }
                | Error::SeedOverlap(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
