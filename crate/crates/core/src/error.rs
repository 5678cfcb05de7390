use thiserror::Error;

use crate::env::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid environment: {}", .0.join("; "))]
    InvalidEnv(Vec<String>),

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    #[error("unknown environment selector `{0}`")]
    UnknownSelector(String),

    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),

    #[error("distribution support of {size} atoms exceeds the cap of {cap}")]
    SupportTooLarge { size: usize, cap: usize },

    #[error("outcome space of {size} joint outcomes exceeds the cap of {cap}")]
    OutcomeSpaceTooLarge { size: f64, cap: f64 },

    #[error("contraction plan was built for a different structure")]
    PlanMismatch,

    #[error("graph could not be reduced to a single node")]
    NotReducible,

    #[error("illegal computation: {0}")]
    IllegalComputation(String),

    #[error("node {0} has already been observed")]
    AlreadyObserved(NodeId),

    #[error("belief space of {size} states exceeds the cap of {cap}")]
    BeliefSpaceTooLarge { size: f64, cap: f64 },

    #[error("belief is outside the solved space")]
    UnsolvedBelief,

    #[error("objective returned a non-finite value at {0:?}")]
    NonFiniteObjective(Vec<f64>),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("oracle cache: {0}")]
    Cache(String),

    #[error("evaluation budget exceeded")]
    BudgetExceeded,

    #[error("{0}")]
    Session(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
