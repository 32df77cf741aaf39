use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::PlanError;
use crate::grid::{AgentTask, GridMap};

use super::astar::ConstraintTable;
use super::cbs::{plan_cbs, CbsConfig, Heuristics};
use super::conflicts::find_conflicts;
use super::{arrival, ConstraintKind, JointPlan, Path};

/// Plans agents one at a time in `order`; each agent avoids the space-time
/// paths of all agents planned before it.
pub fn plan_prioritized(
    map: &GridMap,
    instance: &[AgentTask],
    order: &[usize],
    horizon: u32,
    hold_goal: bool,
) -> Result<JointPlan, PlanError> {
    let heur = Heuristics::new(map, instance);
    plan_in_order(map, instance, order, horizon, hold_goal, &heur)
}

fn plan_in_order(
    map: &GridMap,
    instance: &[AgentTask],
    order: &[usize],
    horizon: u32,
    hold_goal: bool,
    heur: &Heuristics,
) -> Result<JointPlan, PlanError> {
    let mut paths: Vec<Option<Path>> = vec![None; instance.len()];
    let mut planned: Vec<usize> = Vec::new();
    for &agent in order {
        let mut table = ConstraintTable::default();
        for &other in &planned {
            reserve(&mut table, paths[other].as_deref().unwrap_or(&[]), horizon, hold_goal);
        }
        match heur.plan(map, agent, instance[agent], &table, horizon, hold_goal) {
            Some(p) => paths[agent] = Some(p),
            None => {
                let blocking = blocking_agent(map, instance, agent, &planned, &paths, heur, horizon, hold_goal);
                return Err(PlanError::PriorityFailure { agent, blocking });
            }
        }
        planned.push(agent);
    }
    Ok(JointPlan::from_paths(
        paths.into_iter().map(|p| p.unwrap_or_default()).collect(),
    ))
}

/// Adds `path` as obstacles in space-time for a lower-priority agent.
fn reserve(table: &mut ConstraintTable, path: &[super::Coord], horizon: u32, hold_goal: bool) {
    for (t, &cell) in path.iter().enumerate() {
        table.insert(ConstraintKind::Vertex(cell), t as u32);
    }
    for (t, w) in path.windows(2).enumerate() {
        if w[0] != w[1] {
            table.insert(ConstraintKind::Edge(w[1], w[0]), t as u32);
        }
    }
    if hold_goal {
        if let Some(&goal) = path.last() {
            for t in arrival(path) + 1..=horizon {
                table.insert(ConstraintKind::Vertex(goal), t);
            }
        }
    }
}

/// First higher-priority agent whose path collides with the failing agent's
/// unconstrained shortest path.
#[allow(clippy::too_many_arguments)]
fn blocking_agent(
    map: &GridMap,
    instance: &[AgentTask],
    agent: usize,
    planned: &[usize],
    paths: &[Option<Path>],
    heur: &Heuristics,
    horizon: u32,
    hold_goal: bool,
) -> Option<usize> {
    let free = heur.plan(
        map,
        agent,
        instance[agent],
        &ConstraintTable::default(),
        horizon,
        hold_goal,
    )?;
    planned.iter().copied().find(|&other| {
        let pair = [free.clone(), paths[other].clone().unwrap_or_default()];
        !find_conflicts(&pair, hold_goal).is_empty()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Planner {
    Cbs,
    Prioritized,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannerOutcome {
    pub plan: JointPlan,
    pub planner: Planner,
    /// Priority orders tried before success (0 when CBS succeeded).
    pub restarts: usize,
}

pub const MAX_PRIORITY_ORDERS: usize = 10;

/// CBS first; when its node budget runs out, prioritized planning with the
/// identity order followed by seeded random orders, at most
/// [`MAX_PRIORITY_ORDERS`] in total.
pub fn plan_with_fallback(
    map: &GridMap,
    instance: &[AgentTask],
    config: &CbsConfig,
    seed: u64,
) -> Result<PlannerOutcome, PlanError> {
    match plan_cbs(map, instance, config) {
        Ok(plan) => {
            return Ok(PlannerOutcome {
                plan,
                planner: Planner::Cbs,
                restarts: 0,
            })
        }
        Err(PlanError::BudgetExhausted { .. }) => {}
        Err(e) => return Err(e),
    }
    let heur = Heuristics::new(map, instance);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..instance.len()).collect();
    let mut last = PlanError::Infeasible;
    for attempt in 0..MAX_PRIORITY_ORDERS {
        if attempt > 0 {
            order.shuffle(&mut rng);
        }
        match plan_in_order(map, instance, &order, config.horizon, config.hold_goal, &heur) {
            Ok(plan) => {
                return Ok(PlannerOutcome {
                    plan,
                    planner: Planner::Prioritized,
                    restarts: attempt + 1,
                })
            }
            Err(e) => last = e,
        }
    }
    Err(last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Coord;
    use crate::planner::{plan_cbs, single_agent_astar, validate_plan};

    fn task(s: (i32, i32), g: (i32, i32)) -> AgentTask {
        AgentTask {
            start: Coord::new(s.0, s.1),
            goal: Coord::new(g.0, g.1),
        }
    }

    #[test]
    fn single_agent_is_astar() {
        let map = GridMap::empty(6, 6);
        let inst = [task((0, 0), (5, 3))];
        let plan = plan_prioritized(&map, &inst, &[0], 64, false).unwrap();
        let path = single_agent_astar(&map, inst[0].start, inst[0].goal, &[], 64).unwrap();
        assert_eq!(plan.paths[0].len(), path.len());
    }

    #[test]
    fn independent_corridors_match_cbs() {
        let map = GridMap::parse_ascii(".....\n#####\n.....\n").unwrap();
        let inst = [task((0, 0), (0, 4)), task((2, 4), (2, 0))];
        let pp = plan_prioritized(&map, &inst, &[1, 0], 64, false).unwrap();
        let cbs = plan_cbs(&map, &inst, &CbsConfig::default()).unwrap();
        assert_eq!(pp.soc, cbs.soc);
        assert!(validate_plan(&map, &pp, false).unwrap().is_empty());
    }

    #[test]
    fn priority_inversion_fails_where_cbs_succeeds() {
        // Agent 0 sweeps the top row; agent 1 can only escape through the
        // pocket at (1,1), which it cannot reach once agent 0 is committed.
        let map = GridMap::parse_ascii("....\n#.##\n").unwrap();
        let inst = [task((0, 0), (0, 3)), task((0, 2), (0, 0))];
        let cbs = plan_cbs(&map, &inst, &CbsConfig::default()).unwrap();
        assert!(validate_plan(&map, &cbs, false).unwrap().is_empty());
        assert_eq!(
            plan_prioritized(&map, &inst, &[0, 1], 64, false),
            Err(PlanError::PriorityFailure {
                agent: 1,
                blocking: Some(0)
            })
        );
    }
}
