//! Grid-world multi-agent path finding: a partially observable simulator, a
//! CBS expert planner, offline trajectory corpus tooling and evaluation
//! metrics.

pub mod dataset;
pub mod env;
pub mod error;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod observation;
pub mod planner;
pub mod record;
pub mod seed;

pub use env::{
    is_terminal, step, step_in_place, AgentState, Collision, CollisionKind, EpisodeConfig,
    RewardConfig, StepResult, WorldState, FOV,
};
pub use error::{DatasetError, EnvError, MetricsError, PlanError};
pub use grid::{generate_map, sample_instance, Action, AgentTask, Coord, GridMap, Instance};
pub use observation::{observe, Observation};
