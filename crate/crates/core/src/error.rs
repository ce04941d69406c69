use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty decision class")]
    EmptyClass,

    #[error("invalid super action {members:?}: {reason}")]
    InvalidSuperAction { members: Vec<usize>, reason: String },

    #[error("invalid action class: {0}")]
    InvalidClass(String),

    #[error("node index already at layer {layer}, horizon is {horizon}")]
    NodeDepth { layer: usize, horizon: usize },

    #[error("child digit {digit} outside [1, {m}]")]
    NodeDigit { digit: usize, m: usize },

    #[error("instance too large for exhaustive enumeration: {0}")]
    TooLarge(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("structural mismatch between models: {0}")]
    Mismatch(String),

    #[error("assumption 1 violated: {0}")]
    AssumptionViolated(String),

    #[error("reward {value} at (s={state}, a={action}) outside [0, 1]")]
    RewardOutOfRange {
        state: usize,
        action: usize,
        value: f64,
    },

    #[error("bonus requested for an unvisited pair")]
    Unvisited,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
