use alloc::string::String;
use alloc::vec::Vec;

use crate::mdp::Violation;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("unknown state id {0}")]
    UnknownState(usize),
    #[error("unknown action id {0}")]
    UnknownAction(usize),
    #[error("state {0} has no enabled action")]
    NoEnabledAction(usize),
    #[error("duplicate transition for state {state}, action {action}")]
    DuplicateTransition { state: usize, action: usize },
    #[error("negative probability {prob} for item {item}")]
    NegativeProbability { item: usize, prob: f64 },
    #[error("item {0} appears twice in one distribution")]
    DuplicateItem(usize),
    #[error("distribution sums to {0}, expected 1")]
    NotNormalized(f64),
    #[error("strategy is not valid for the model ({} violation(s))", .0.len())]
    InvalidStrategy(Vec<Violation>),
    #[error("reachability system is singular after eliminating zero states")]
    SingularSystem,
    #[error("target equals the initial state; no strategy reaches it with probability below {gamma}")]
    TargetIsInitial { gamma: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("grid oracle budget exceeded: {0}")]
    GridTooLarge(String),
    #[error("no quadratic constraint for state {0}")]
    NoQuadraticConstraint(usize),
    #[error("result carries no strategy")]
    MissingStrategy,
    #[error("problem text, line {line}: {msg}")]
    Parse { line: usize, msg: String },
}
