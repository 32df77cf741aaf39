use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::PlanError;
use crate::grid::{Coord, GridMap};

use super::{position_at, JointPlan, Path};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictKind {
    Vertex,
    Edge,
}

/// Pairwise conflict. For an edge conflict `from`/`to` describe the move of
/// `agents.0` and `t` is the departure time; for a vertex conflict `from == to`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Conflict {
    pub t: u32,
    pub kind: ConflictKind,
    pub agents: (usize, usize),
    pub from: Coord,
    pub to: Coord,
}

impl Conflict {
    pub fn cell(&self) -> Coord {
        self.to
    }
}

fn horizon_of(paths: &[Path]) -> u32 {
    paths.iter().map(|p| p.len() as u32).max().unwrap_or(0)
}

/// All conflicts, ordered by time, then kind, then agent pair.
pub fn find_conflicts(paths: &[Path], hold_goal: bool) -> Vec<Conflict> {
    scan(paths, hold_goal, false)
}

/// Earliest conflict in the same order as [`find_conflicts`].
pub fn first_conflict(paths: &[Path], hold_goal: bool) -> Option<Conflict> {
    scan(paths, hold_goal, true).into_iter().next()
}

fn scan(paths: &[Path], hold_goal: bool, stop_early: bool) -> Vec<Conflict> {
    let mut out = Vec::new();
    let end = horizon_of(paths);
    let mut at: HashMap<Coord, Vec<usize>> = HashMap::new();
    for t in 0..end {
        at.clear();
        for (i, p) in paths.iter().enumerate() {
            if let Some(c) = position_at(p, t, hold_goal) {
                at.entry(c).or_default().push(i);
            }
        }
        let mut step = Vec::new();
        for (&cell, agents) in &at {
            for (x, &a) in agents.iter().enumerate() {
                for &b in &agents[x + 1..] {
                    step.push(Conflict {
                        t,
                        kind: ConflictKind::Vertex,
                        agents: (a.min(b), a.max(b)),
                        from: cell,
                        to: cell,
                    });
                }
            }
        }
        // swaps between t and t+1
        for (a, pa) in paths.iter().enumerate() {
            let (Some(a0), Some(a1)) = (position_at(pa, t, hold_goal), position_at(pa, t + 1, hold_goal))
            else {
                continue;
            };
            if a0 == a1 {
                continue;
            }
            if let Some(others) = at.get(&a1) {
                for &b in others.iter().filter(|&&b| b > a) {
                    if position_at(&paths[b], t + 1, hold_goal) == Some(a0) {
                        step.push(Conflict {
                            t,
                            kind: ConflictKind::Edge,
                            agents: (a, b),
                            from: a0,
                            to: a1,
                        });
                    }
                }
            }
        }
        if !step.is_empty() {
            step.sort();
            if stop_early {
                out.push(step[0]);
                return out;
            }
            out.extend(step);
        }
    }
    out
}

/// Checks path shape, then returns every vertex and edge conflict.
pub fn validate_plan(
    map: &GridMap,
    plan: &JointPlan,
    hold_goal: bool,
) -> Result<Vec<Conflict>, PlanError> {
    for (agent, path) in plan.paths.iter().enumerate() {
        if path.is_empty() {
            return Err(PlanError::MalformedPath {
                agent,
                t: 0,
                reason: "empty path".into(),
            });
        }
        for (t, c) in path.iter().enumerate() {
            if !map.is_free(*c) {
                return Err(PlanError::MalformedPath {
                    agent,
                    t,
                    reason: format!("cell {c} is not free"),
                });
            }
        }
        for (t, w) in path.windows(2).enumerate() {
            if w[0].manhattan(w[1]) > 1 {
                return Err(PlanError::MalformedPath {
                    agent,
                    t,
                    reason: format!("{} -> {} is not a unit move", w[0], w[1]),
                });
            }
        }
        let last = *path.last().unwrap_or(&path[0]);
        if let Some(t) = path[..path.len() - 1].iter().position(|c| *c == last) {
            return Err(PlanError::MalformedPath {
                agent,
                t,
                reason: "visits its goal before arriving".into(),
            });
        }
    }
    Ok(find_conflicts(&plan.paths, hold_goal))
}
