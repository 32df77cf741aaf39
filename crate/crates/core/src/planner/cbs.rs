use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::PlanError;
use crate::grid::{AgentTask, GridMap};

use super::astar::{space_time_astar, ConstraintTable};
use super::conflicts::{find_conflicts, first_conflict, ConflictKind};
use super::{JointPlan, Path, SpaceTimeConstraint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CbsConfig {
    pub horizon: u32,
    /// Maximum number of constraint-tree nodes expanded.
    pub node_budget: usize,
    pub hold_goal: bool,
}

impl Default for CbsConfig {
    fn default() -> Self {
        Self {
            horizon: crate::env::DEFAULT_HORIZON,
            node_budget: 100_000,
            hold_goal: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CbsStats {
    pub expanded: usize,
    pub generated: usize,
}

struct Node {
    constraints: Vec<SpaceTimeConstraint>,
    paths: Vec<Path>,
    cost: u64,
}

/// Distance-to-goal tables, used as the low-level heuristic. They are exact
/// without constraints and stay admissible with them.
pub(crate) struct Heuristics {
    dist: Vec<Vec<Option<u32>>>,
}

impl Heuristics {
    pub(crate) fn new(map: &GridMap, instance: &[AgentTask]) -> Self {
        Self {
            dist: instance.iter().map(|t| map.distances_from(t.goal)).collect(),
        }
    }

    pub(crate) fn plan(
        &self,
        map: &GridMap,
        agent: usize,
        task: AgentTask,
        table: &ConstraintTable,
        horizon: u32,
        hold_goal: bool,
    ) -> Option<Path> {
        let dist = &self.dist[agent];
        space_time_astar(map, task.start, task.goal, table, horizon, hold_goal, |c| {
            dist[map.index(c)]
        })
    }
}

fn cost_of(paths: &[Path]) -> u64 {
    paths.iter().map(|p| super::arrival(p) as u64).sum()
}

/// Sum-of-costs optimal CBS. High level is best-first on SoC, ties broken by
/// conflict count and then creation order; each node splits on its earliest
/// conflict.
pub fn plan_cbs(
    map: &GridMap,
    instance: &[AgentTask],
    config: &CbsConfig,
) -> Result<JointPlan, PlanError> {
    plan_cbs_with_stats(map, instance, config).0
}

pub fn plan_cbs_with_stats(
    map: &GridMap,
    instance: &[AgentTask],
    config: &CbsConfig,
) -> (Result<JointPlan, PlanError>, CbsStats) {
    let mut stats = CbsStats::default();
    let heur = Heuristics::new(map, instance);
    let mut root_paths = Vec::with_capacity(instance.len());
    for (agent, task) in instance.iter().enumerate() {
        let table = ConstraintTable::default();
        match heur.plan(map, agent, *task, &table, config.horizon, config.hold_goal) {
            Some(p) => root_paths.push(p),
            None => {
                return (
                    Err(PlanError::NoPath {
                        agent,
                        start: task.start,
                        goal: task.goal,
                        horizon: config.horizon,
                    }),
                    stats,
                )
            }
        }
    }

    let mut nodes: Vec<Node> = Vec::new();
    let mut open = BinaryHeap::new();
    let root_conflicts = find_conflicts(&root_paths, config.hold_goal).len();
    nodes.push(Node {
        cost: cost_of(&root_paths),
        constraints: Vec::new(),
        paths: root_paths,
    });
    open.push(Reverse((nodes[0].cost, root_conflicts, 0usize)));
    stats.generated = 1;

    while let Some(Reverse((_, _, id))) = open.pop() {
        let Some(conflict) = first_conflict(&nodes[id].paths, config.hold_goal) else {
            let paths = std::mem::take(&mut nodes[id].paths);
            return (Ok(JointPlan::from_paths(paths)), stats);
        };
        if stats.expanded >= config.node_budget {
            return (
                Err(PlanError::BudgetExhausted {
                    budget: config.node_budget,
                    expanded: stats.expanded,
                }),
                stats,
            );
        }
        stats.expanded += 1;

        let (a, b) = conflict.agents;
        let split = match conflict.kind {
            ConflictKind::Vertex => [
                SpaceTimeConstraint::vertex(a, conflict.to, conflict.t),
                SpaceTimeConstraint::vertex(b, conflict.to, conflict.t),
            ],
            ConflictKind::Edge => [
                SpaceTimeConstraint::edge(a, conflict.from, conflict.to, conflict.t),
                SpaceTimeConstraint::edge(b, conflict.to, conflict.from, conflict.t),
            ],
        };
        for constraint in split {
            let agent = constraint.agent;
            let mut constraints = nodes[id].constraints.clone();
            constraints.push(constraint);
            let table = ConstraintTable::for_agent(agent, &constraints);
            let Some(path) = heur.plan(
                map,
                agent,
                instance[agent],
                &table,
                config.horizon,
                config.hold_goal,
            ) else {
                continue;
            };
            let mut paths = nodes[id].paths.clone();
            paths[agent] = path;
            let cost = cost_of(&paths);
            let n_conflicts = find_conflicts(&paths, config.hold_goal).len();
            nodes.push(Node {
                constraints,
                paths,
                cost,
            });
            stats.generated += 1;
            open.push(Reverse((cost, n_conflicts, nodes.len() - 1)));
        }
        // expanded nodes keep only what children may still need
        nodes[id].paths = Vec::new();
        nodes[id].constraints = Vec::new();
    }
    (Err(PlanError::Infeasible), stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Coord;
    use crate::planner::{single_agent_astar, validate_plan};

    fn task(s: (i32, i32), g: (i32, i32)) -> AgentTask {
        AgentTask {
            start: Coord::new(s.0, s.1),
            goal: Coord::new(g.0, g.1),
        }
    }

    #[test]
    fn single_agent_matches_astar() {
        let map = crate::grid::generate_map(8, 8, 0.2, 5).unwrap();
        let inst = crate::grid::sample_instance(&map, 1, 9).unwrap();
        let plan = plan_cbs(&map, &inst, &CbsConfig::default()).unwrap();
        let path = single_agent_astar(&map, inst[0].start, inst[0].goal, &[], 256).unwrap();
        assert_eq!(plan.soc as usize, path.len() - 1);
    }

    #[test]
    fn exchange_on_three_by_three() {
        let map = GridMap::empty(3, 3);
        let inst = [task((0, 0), (0, 2)), task((0, 2), (0, 0))];
        let plan = plan_cbs(&map, &inst, &CbsConfig::default()).unwrap();
        assert!(validate_plan(&map, &plan, false).unwrap().is_empty());
        // one agent detours through row 1: 2 + 4
        assert_eq!(plan.soc, 6);
    }

    #[test]
    fn head_on_corridor_is_infeasible() {
        let map = GridMap::empty(5, 1);
        let inst = [task((0, 0), (0, 4)), task((0, 4), (0, 0))];
        let cfg = CbsConfig {
            horizon: 12,
            node_budget: 20_000,
            hold_goal: false,
        };
        assert!(plan_cbs(&map, &inst, &cfg).is_err());
    }

    #[test]
    fn budget_is_enforced() {
        let map = GridMap::empty(5, 1);
        let inst = [task((0, 0), (0, 4)), task((0, 4), (0, 0))];
        let cfg = CbsConfig {
            horizon: 64,
            node_budget: 10,
            hold_goal: false,
        };
        assert_eq!(
            plan_cbs(&map, &inst, &cfg),
            Err(PlanError::BudgetExhausted {
                budget: 10,
                expanded: 10
            })
        );
    }

    #[test]
    fn holding_goals_changes_the_answer() {
        // agent 0 parks in the middle of the corridor; agent 1 must pass first
        let map = GridMap::empty(4, 2);
        let inst = [task((0, 0), (0, 1)), task((0, 3), (0, 0))];
        for hold in [false, true] {
            let cfg = CbsConfig {
                hold_goal: hold,
                ..CbsConfig::default()
            };
            let plan = plan_cbs(&map, &inst, &cfg).unwrap();
            assert!(validate_plan(&map, &plan, hold).unwrap().is_empty());
        }
    }
}
