//! Centralized expert planning: space-time A*, Conflict-Based Search and
//! prioritized planning, plus plan validation.
//!
//! Paths are indexed by timestep with `path[0]` the start and the last cell the
//! goal; the arrival time of an agent is `path.len() - 1`. An agent is present
//! on the board up to and including its arrival time. After that it is gone,
//! or, when goals are held, it stays on its goal forever. The goal cell is
//! terminal: an agent is done the first time it stands on it.

mod astar;
mod cbs;
mod conflicts;
mod prioritized;

use serde::{Deserialize, Serialize};

pub use astar::{single_agent_astar, space_time_astar, ConstraintTable};
pub use cbs::{plan_cbs, plan_cbs_with_stats, CbsConfig, CbsStats};
pub use conflicts::{find_conflicts, first_conflict, validate_plan, Conflict, ConflictKind};
pub use prioritized::{plan_prioritized, plan_with_fallback, Planner, PlannerOutcome};

use crate::grid::Coord;

pub type Path = Vec<Coord>;

/// Space-time constraint on one agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpaceTimeConstraint {
    pub agent: usize,
    pub kind: ConstraintKind,
    /// Vertex: the forbidden time. Edge: the departure time of the forbidden move.
    pub t: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConstraintKind {
    Vertex(Coord),
    Edge(Coord, Coord),
}

impl SpaceTimeConstraint {
    pub fn vertex(agent: usize, cell: Coord, t: u32) -> Self {
        Self {
            agent,
            kind: ConstraintKind::Vertex(cell),
            t,
        }
    }

    pub fn edge(agent: usize, from: Coord, to: Coord, t: u32) -> Self {
        Self {
            agent,
            kind: ConstraintKind::Edge(from, to),
            t,
        }
    }
}

/// Collision-free joint plan with its costs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointPlan {
    pub paths: Vec<Path>,
    pub soc: u64,
    pub makespan: u32,
}

impl JointPlan {
    pub fn from_paths(paths: Vec<Path>) -> Self {
        let soc = paths.iter().map(|p| arrival(p) as u64).sum();
        let makespan = paths.iter().map(|p| arrival(p)).max().unwrap_or(0);
        Self {
            paths,
            soc,
            makespan,
        }
    }

    pub fn arrival_times(&self) -> Vec<u32> {
        self.paths.iter().map(|p| arrival(p)).collect()
    }

    pub fn is_consistent(&self) -> bool {
        *self == Self::from_paths(self.paths.clone())
    }
}

pub(crate) fn arrival(path: &[Coord]) -> u32 {
    path.len().saturating_sub(1) as u32
}

/// Cell of an agent at time `t`, or `None` once it has left the board.
pub fn position_at(path: &[Coord], t: u32, hold_goal: bool) -> Option<Coord> {
    match path.get(t as usize) {
        Some(c) => Some(*c),
        None if hold_goal => path.last().copied(),
        None => None,
    }
}
