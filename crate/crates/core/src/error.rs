use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid leaf law: {0}")]
    InvalidLaw(String),

    #[error("malformed tree: {0}")]
    InvalidTree(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("capacity exceeded: {what} needs {needed}, limit is {limit}")]
    Capacity {
        what: String,
        needed: u128,
        limit: u128,
    },

    #[error("missing capability: {0}")]
    Capability(String),

    #[error("value {value} outside usable range [0, {max}]")]
    Range { value: u64, max: u64 },

    #[error("too few samples: need {needed}, got {got}")]
    SampleSize { needed: usize, got: usize },

    #[error("undersampled: {what} needs {needed}, achieved {achieved}")]
    Undersampled {
        what: String,
        needed: usize,
        achieved: usize,
    },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("degenerate leaf law (kappa = 0): {0}")]
    DegenerateLaw(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
