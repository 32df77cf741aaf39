use thiserror::Error;

use crate::grid::Coord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("obstacle density {0} outside [0, 0.5]")]
    InvalidDensity(f64),
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("cell {0} is out of bounds")]
    OutOfBounds(Coord),
    #[error("instance sampling failed: {0}")]
    Sampling(String),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("episode already terminated at t={0}")]
    Terminated(u32),
    #[error("unknown agent id {0}")]
    UnknownAgent(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("agent {agent}: no path from {start} to {goal} within horizon {horizon}")]
    NoPath {
        agent: usize,
        start: Coord,
        goal: Coord,
        horizon: u32,
    },
    #[error("constraint tree exhausted: instance infeasible within horizon")]
    Infeasible,
    #[error("node budget of {budget} exhausted after {expanded} expansions")]
    BudgetExhausted { budget: usize, expanded: usize },
    #[error("prioritized planning failed for agent {agent} (blocked by {blocking:?})")]
    PriorityFailure {
        agent: usize,
        blocking: Option<usize>,
    },
    #[error("malformed path for agent {agent} at t={t}: {reason}")]
    MalformedPath { agent: usize, t: usize, reason: String },
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad dataset file: {0}")]
    Format(String),
    #[error("metadata: {0}")]
    Json(#[from] serde_json::Error),
    #[error("expert replay collided: agent {agent} at t={t} ({kind})")]
    ReplayCollision { agent: usize, t: u32, kind: String },
    #[error("plan invalid for replay: {0}")]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("inconsistent episode record: {0}")]
    Inconsistent(String),
}
