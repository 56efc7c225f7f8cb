use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{op} needs at least {min} features per row, got {got}")]
    TooFewFeatures {
        op: &'static str,
        min: usize,
        got: usize,
    },

    #[error("backward needs a scalar (1x1) loss, got shape {0:?}")]
    NonScalarLoss((usize, usize)),

    #[error("non-finite gradient in parameter `{name}`")]
    NonFiniteGradient { name: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("markov chain is not ergodic: {0}")]
    NotErgodic(String),

    #[error("environment fault at step {step}: {source}")]
    Env {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
