use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("reward {0} is not binary (expected 0 or 1)")]
    NonBinaryReward(f64),

    #[error("group size must be at least 2, got {0}")]
    GroupTooSmall(usize),

    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("malformed record: {0}")]
    MalformedRecord(String),

    #[error("batch has zero-advantage fraction 1, dilution ratio is undefined")]
    AllZeroBatch,

    #[error("advantage vector has zero norm, preservation ratio is undefined")]
    ZeroNorm,

    #[error("precision is undefined with no cuts")]
    NoCuts,

    #[error("AUROC needs both classes, got only {0}")]
    SingleClass(&'static str),

    #[error("rank correlation is undefined for constant input")]
    ConstantInput,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("budget {budget} exceeds corpus size {corpus}")]
    BudgetTooLarge { budget: usize, corpus: usize },

    #[error("group {prompt_id} has no divergence at K={k}")]
    MissingDivergence { prompt_id: String, k: usize },

    #[error("refusing to mix runs with different config hashes: {0} vs {1}")]
    ConfigHashMismatch(String, String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
