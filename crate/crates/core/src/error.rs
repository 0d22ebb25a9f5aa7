use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid axis {axis} for shape {shape:?}")]
    Axis { axis: usize, shape: Vec<usize> },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("missing gradient for parameter `{0}`")]
    MissingGrad(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("parameter structure mismatch: {0}")]
    Structure(String),
    #[error("action {action} out of range for {actions} actions")]
    ActionOutOfRange { action: usize, actions: usize },
    #[error("expected {expected} agent actions, got {got}")]
    AgentCount { expected: usize, got: usize },
    #[error("step called on a finished episode")]
    EpisodeFinished,
    #[error("environment `{0}` has no enumerable payoff table")]
    NotTabular(String),
    #[error("joint action {0:?} missing from table")]
    MissingJointAction(Vec<usize>),
    #[error("empty action-value row")]
    EmptyRow,
    #[error("unknown algorithm variant `{0}`")]
    UnknownVariant(String),
    #[error("unknown environment `{0}`")]
    UnknownEnv(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("replay buffer holds {have} episodes, batch needs {need}")]
    InsufficientData { have: usize, need: usize },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
}
