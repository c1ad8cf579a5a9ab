use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("query budget exhausted: {dispatched} of {budget} dispatches used")]
    BudgetExhausted { budget: u64, dispatched: u64 },

    #[error("transport failure on {endpoint} after {attempts} attempt(s): {message}")]
    Transport {
        endpoint: String,
        attempts: u32,
        message: String,
    },

    #[error("protocol error on {endpoint}: {message}")]
    Protocol { endpoint: String, message: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("non-finite value in input")]
    NonFiniteInput,

    #[error("unknown hierarchy root: {0}")]
    UnknownRoot(String),

    #[error("malformed hierarchy file at line {line}: {message}")]
    Hierarchy { line: usize, message: String },

    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("distribution has no prototypes")]
    EmptyDistribution,

    #[error("pool for label {0:?} is empty")]
    EmptyPool(String),

    #[error("label group {0:?} is empty")]
    EmptyGroup(String),

    #[error("centroid for label {0:?} has zero norm")]
    DegenerateCentroid(String),

    #[error("vector has zero norm: {0}")]
    DegenerateVector(String),

    #[error("candidate {0:?} has no radius estimate")]
    MissingRadius(String),

    #[error("at least two labels are required")]
    SingleLabel,

    #[error("at least two sentences are required")]
    TooFewSentences,

    #[error("prototype set is empty: {0}")]
    EmptySet(String),

    #[error("invalid world spec: {0}")]
    Spec(String),

    #[error("operation requires a halfspace world")]
    UnsupportedWorld,

    #[error("port {0} is already in use")]
    PortInUse(u16),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing stage artifact {artifact} (run `{stage}` first)")]
    MissingStageArtifact { stage: String, artifact: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub(crate) fn protocol(endpoint: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Protocol {
            endpoint: endpoint.into(),
            message: msg.into(),
        }
    }

    /// Errors that must abort a whole run rather than degrade a single label.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            Error::BudgetExhausted { .. } | Error::Transport { .. } | Error::Io(_)
        )
    }
}
