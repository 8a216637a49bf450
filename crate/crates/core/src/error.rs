use thiserror::Error;

use crate::protocol::Phase;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("merge failed on shard {shard}: {reason}")]
    Merge { shard: u32, reason: String },

    #[error("prior model of kind oracle requires dataset labels")]
    MissingLabels,

    #[error("invalid prior spec: {0}")]
    InvalidPrior(String),

    #[error("extraction failed: expected input dimension {expected}, got {got}")]
    Extraction { expected: usize, got: usize },

    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("projection expects {expected}-dimensional features, got {got}")]
    Projection { expected: usize, got: usize },

    #[error("uniform value needs at least 2 rows, got {0}")]
    InsufficientData(usize),

    #[error("non-finite value encountered: {0}")]
    Numeric(String),

    #[error("best-prior selection failed: {0}")]
    Selection(String),

    #[error("alignment shape mismatch: {0}")]
    Alignment(String),

    #[error("least-squares system is rank deficient (rank {rank} < {n}); use a positive ridge_lambda")]
    IllPosed { rank: usize, n: usize },

    #[error("participant {participant} not ready: {missing} pending")]
    NotReady { participant: u32, missing: &'static str },

    #[error("protocol error during {phase}: {reason}")]
    Protocol { phase: Phase, reason: String },

    #[error("timed out during {phase} waiting for {waiting_on}")]
    Timeout { phase: Phase, waiting_on: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("downstream model error: {0}")]
    Downstream(String),

    #[error("invalid evaluation set: {0}")]
    InvalidEval(String),

    #[error("rank correlation error: {0}")]
    Correlation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
