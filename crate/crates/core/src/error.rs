use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("label set must contain at least one label")]
    EmptyLabelSet,

    #[error("label {label} is out of range for a universe of size {universe}")]
    LabelOutOfRange { label: usize, universe: usize },

    #[error("universe sizes differ: {left} vs {right}")]
    UniverseMismatch { left: usize, right: usize },

    #[error("anchor index {anchor} out of range for a batch of {len} samples")]
    AnchorOutOfRange { anchor: usize, len: usize },

    #[error("batch of {len} samples exceeds the oracle limit of {max}")]
    BatchTooLarge { len: usize, max: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
