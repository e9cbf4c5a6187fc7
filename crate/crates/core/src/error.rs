//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid perturbation kernel: {0}")]
    InvalidKernel(String),

    #[error("perturbation level eta={0} outside [0, 0.5)")]
    InvalidEta(f64),

    #[error("instance too large for exhaustive enumeration: {combinations} vertex assignments exceed the {limit} limit")]
    EnumerationTooLarge { combinations: f64, limit: u64 },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("non-finite loss at batch {batch} of epoch {epoch}")]
    NanLoss { epoch: usize, batch: usize },

    #[error("unreachable observation pair: no action explains the transition {from} -> {to}")]
    UnreachablePair { from: usize, to: usize },

    #[error("learner failed at step {step}: {source}")]
    LearnerFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("horizon mismatch: simulator has H={simulator}, environment has H={environment}")]
    HorizonMismatch { simulator: usize, environment: usize },

    #[error("clustering produced id {id} but only {num_clusters} clusters are configured")]
    ClusterOutOfRange { id: usize, num_clusters: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("malformed map: {0}")]
    MalformedMap(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
