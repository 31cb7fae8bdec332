use thiserror::Error;

/// Errors surfaced by index construction, sampling, and data loading.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid probability {0}: must lie in (0, 1]")]
    InvalidProbability(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("query is cyclic: no ear decomposition exists among relations {relations:?} (attributes {attributes:?})")]
    CyclicQuery {
        relations: Vec<String>,
        attributes: Vec<String>,
    },

    #[error("counter capacity exceeded: {0}")]
    Capacity(String),

    #[error("rank {rank} out of range 1..={max}: internal index inconsistency")]
    RankOutOfRange { rank: u128, max: u128 },

    #[error("element weight {weight} exceeds declared upper bound {upper}")]
    WeightAboveUpperBound { weight: f64, upper: f64 },

    #[error("join result cap {cap} exceeded")]
    ResultCapExceeded { cap: u64 },

    #[error("{file}:{line}: duplicate tuple (set semantics)")]
    DuplicateTuple { file: String, line: u64 },

    #[error("{file}:{line}: {msg}")]
    BadInput {
        file: String,
        line: u64,
        msg: String,
    },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("malformed index file: {0}")]
    BadIndexFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
