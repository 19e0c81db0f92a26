use crate::model::PlayerId;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("player {player} out of range for a game of {n} players")]
    PlayerOutOfRange { player: PlayerId, n: usize },

    #[error("player {0} appears more than once in the coalition")]
    DuplicatePlayer(PlayerId),

    #[error("insertion slot {slot} out of range 0..={len}")]
    SlotOutOfRange { slot: usize, len: usize },

    #[error("exact enumeration is limited to n <= {limit}, got n = {n}")]
    ExactLimit { n: usize, limit: usize },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid bound input: {0}")]
    InvalidBound(String),

    #[error("utility oracle failed: {0}")]
    Oracle(String),

    #[error("cross-check between two solver routes failed: {0}")]
    CrossCheck(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures raised by a utility oracle itself (as opposed to
    /// bad configuration or input). The CLI maps these to a distinct exit code.
    pub fn is_oracle_failure(&self) -> bool {
        matches!(self, Error::Oracle(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
