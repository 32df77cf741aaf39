use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};

use crate::error::PlanError;
use crate::grid::{Action, Coord, GridMap};

use super::{ConstraintKind, Path, SpaceTimeConstraint};

/// Constraints of a single agent, indexed for lookup during search.
#[derive(Debug, Clone, Default)]
pub struct ConstraintTable {
    vertex: HashSet<(Coord, u32)>,
    edge: HashSet<(Coord, Coord, u32)>,
    max_t: Option<u32>,
    last_at: HashMap<Coord, u32>,
}

impl ConstraintTable {
    /// Keeps only the constraints addressed to `agent`.
    pub fn for_agent(agent: usize, constraints: &[SpaceTimeConstraint]) -> Self {
        Self::from_constraints(constraints.iter().filter(|c| c.agent == agent))
    }

    pub fn from_constraints<'a>(
        constraints: impl IntoIterator<Item = &'a SpaceTimeConstraint>,
    ) -> Self {
        let mut table = Self::default();
        for c in constraints {
            table.insert(c.kind, c.t);
        }
        table
    }

    pub fn insert(&mut self, kind: ConstraintKind, t: u32) {
        match kind {
            ConstraintKind::Vertex(cell) => {
                self.vertex.insert((cell, t));
                let last = self.last_at.entry(cell).or_insert(t);
                *last = (*last).max(t);
            }
            ConstraintKind::Edge(from, to) => {
                self.edge.insert((from, to, t));
            }
        }
        self.max_t = Some(self.max_t.map_or(t, |m| m.max(t)));
    }

    pub fn is_empty(&self) -> bool {
        self.max_t.is_none()
    }

    fn vertex_blocked(&self, cell: Coord, t: u32) -> bool {
        self.vertex.contains(&(cell, t))
    }

    fn edge_blocked(&self, from: Coord, to: Coord, t: u32) -> bool {
        self.edge.contains(&(from, to, t))
    }

    /// Whether the goal can be held from `t` on without meeting a vertex constraint.
    fn can_hold(&self, cell: Coord, t: u32) -> bool {
        self.last_at.get(&cell).is_none_or(|&last| last < t)
    }

    /// Beyond this time the table no longer distinguishes timesteps.
    fn horizon_of_interest(&self) -> u32 {
        self.max_t.map_or(0, |m| m + 1)
    }
}

/// Shortest constraint-respecting path under the Manhattan heuristic. Every
/// constraint in `constraints` applies to the agent being planned.
pub fn single_agent_astar(
    map: &GridMap,
    start: Coord,
    goal: Coord,
    constraints: &[SpaceTimeConstraint],
    horizon: u32,
) -> Result<Path, PlanError> {
    let agent = constraints.first().map_or(0, |c| c.agent);
    let table = ConstraintTable::from_constraints(constraints);
    space_time_astar(map, start, goal, &table, horizon, false, |c| {
        Some(c.manhattan(goal))
    })
    .ok_or(PlanError::NoPath {
        agent,
        start,
        goal,
        horizon,
    })
}

/// Space-time A* with a caller-supplied admissible heuristic. A heuristic of
/// `None` marks a cell from which the goal is unreachable.
///
/// Ties on f are broken toward the smaller timestep, then by insertion order,
/// which follows the action codes (Wait < N < E < S < W).
pub fn space_time_astar(
    map: &GridMap,
    start: Coord,
    goal: Coord,
    table: &ConstraintTable,
    horizon: u32,
    hold_goal: bool,
    heuristic: impl Fn(Coord) -> Option<u32>,
) -> Option<Path> {
    if !map.is_free(start) || !map.is_free(goal) || table.vertex_blocked(start, 0) {
        return None;
    }
    let h0 = heuristic(start)?;
    let settle = table.horizon_of_interest();
    let key = |cell: Coord, t: u32| (map.index(cell), t.min(settle));

    // arena of (cell, t, parent)
    let mut nodes: Vec<(Coord, u32, usize)> = vec![(start, 0, usize::MAX)];
    let mut open = BinaryHeap::new();
    let mut seq: u64 = 0;
    open.push(Reverse((h0, 0u32, seq, 0usize)));
    let mut closed: HashSet<(usize, u32)> = HashSet::new();

    while let Some(Reverse((_, t, _, idx))) = open.pop() {
        let cell = nodes[idx].0;
        if !closed.insert(key(cell, t)) {
            continue;
        }
        if cell == goal {
            if !hold_goal || table.can_hold(goal, t) {
                return Some(reconstruct(&nodes, idx));
            }
            // arriving means stopping; this arrival time is not usable
            continue;
        }
        if t >= horizon {
            continue;
        }
        let nt = t + 1;
        for action in Action::ALL {
            let next = cell.offset(action);
            if !map.is_free(next)
                || table.vertex_blocked(next, nt)
                || table.edge_blocked(cell, next, t)
            {
                continue;
            }
            if closed.contains(&key(next, nt)) {
                continue;
            }
            let Some(h) = heuristic(next) else { continue };
            nodes.push((next, nt, idx));
            seq += 1;
            open.push(Reverse((nt + h, nt, seq, nodes.len() - 1)));
        }
    }
    None
}

fn reconstruct(nodes: &[(Coord, u32, usize)], mut idx: usize) -> Path {
    let mut path = Vec::new();
    while idx != usize::MAX {
        path.push(nodes[idx].0);
        idx = nodes[idx].2;
    }
    path.reverse();
    path
}
