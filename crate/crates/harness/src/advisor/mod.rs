//! Full-observability advisors used while an agent is taken away from its
//! own policy.

mod llm;
mod parse;
mod prompt;

use dtmapf_core::{Action, Coord, GridMap, WorldState};
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

pub use llm::{CallLog, LlmAdvisor, LlmConfig, TransportFallback};
pub use parse::{parse_response, ParseFallback};
pub use prompt::{build_prompt, format_query, ChatMessage, PromptBundle, PromptConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotAgent {
    pub id: usize,
    pub pos: Coord,
    pub goal: Coord,
    pub done: bool,
}

/// Complete view of the world at one instant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldSnapshot {
    pub width: usize,
    pub height: usize,
    pub obstacles: Vec<Coord>,
    pub agents: Vec<SnapshotAgent>,
    pub t: u32,
    /// Whether done agents still occupy their goal cell.
    pub done_agents_block: bool,
}

impl WorldSnapshot {
    pub fn from_world(world: &WorldState) -> Self {
        Self {
            width: world.map.width(),
            height: world.map.height(),
            obstacles: world.map.obstacle_cells(),
            agents: world
                .agents
                .iter()
                .map(|a| SnapshotAgent {
                    id: a.id,
                    pos: a.pos,
                    goal: a.goal,
                    done: a.done,
                })
                .collect(),
            t: world.t,
            done_agents_block: world.done_agents_block,
        }
    }

    pub fn map(&self) -> GridMap {
        let mut map = GridMap::empty(self.width, self.height);
        for c in &self.obstacles {
            map.set_obstacle(*c, true);
        }
        map
    }

    pub fn agent(&self, id: usize) -> Option<&SnapshotAgent> {
        self.agents.iter().find(|a| a.id == id)
    }

    /// Cells held by agents other than `id`.
    pub fn occupied_by_others(&self, id: usize) -> Vec<Coord> {
        self.agents
            .iter()
            .filter(|a| a.id != id && (!a.done || self.done_agents_block))
            .map(|a| a.pos)
            .collect()
    }
}

/// Advice for one controlled agent. `action == None` hands the step back to
/// the agent's own policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentAdvice {
    pub agent: usize,
    pub action: Option<Action>,
    /// Why the advisor could not supply its own answer, if it could not.
    pub fallback: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdvisorResponse {
    pub advice: Vec<AgentAdvice>,
    pub raw: Option<String>,
}

impl AdvisorResponse {
    pub fn get(&self, agent: usize) -> Option<&AgentAdvice> {
        self.advice.iter().find(|a| a.agent == agent)
    }

    pub fn action(&self, agent: usize) -> Option<Action> {
        self.get(agent).and_then(|a| a.action)
    }

    pub fn fallback_count(&self) -> usize {
        self.advice.iter().filter(|a| a.fallback.is_some()).count()
    }
}

/// Joint advisor: one call covers all controlled agents for one timestep.
pub trait Advisor {
    fn name(&self) -> &str;

    fn advise(
        &mut self,
        snapshot: &WorldSnapshot,
        controlled: &[usize],
    ) -> Result<AdvisorResponse, HarnessError>;
}

/// One step along a shortest path to each controlled agent's goal, treating
/// other agents' current cells as obstacles. Ties go to the lowest action
/// code; an agent with no path this step waits. When several controlled
/// agents pick the same cell, the lowest id moves and the rest wait.
pub fn oracle_advise(snapshot: &WorldSnapshot, controlled: &[usize]) -> Vec<(usize, Action)> {
    let map = snapshot.map();
    let mut advice: Vec<(usize, Action)> = controlled
        .iter()
        .map(|&id| {
            let Some(me) = snapshot.agent(id) else {
                return (id, Action::Wait);
            };
            let others = snapshot.occupied_by_others(id);
            let dist = map.distances_from_blocked(me.goal, |c| others.contains(&c));
            let d_here = dist[map.index(me.pos)];
            let action = match d_here {
                Some(d) if d > 0 => Action::ALL[1..]
                    .iter()
                    .copied()
                    .find(|&a| {
                        let next = me.pos.offset(a);
                        map.in_bounds(next) && dist[map.index(next)] == Some(d - 1)
                    })
                    .unwrap_or(Action::Wait),
                _ => Action::Wait,
            };
            (id, action)
        })
        .collect();
    let mut order: Vec<usize> = (0..advice.len()).collect();
    order.sort_by_key(|&i| advice[i].0);
    let mut claimed = Vec::new();
    for i in order {
        let (id, action) = advice[i];
        let Some(me) = snapshot.agent(id) else { continue };
        let target = me.pos.offset(action);
        if action.is_move() && claimed.contains(&target) {
            advice[i].1 = Action::Wait;
        } else {
            claimed.push(target);
        }
    }
    advice
}

#[derive(Debug, Default, Clone)]
pub struct OracleAdvisor;

impl Advisor for OracleAdvisor {
    fn name(&self) -> &str {
        "oracle"
    }

    fn advise(
        &mut self,
        snapshot: &WorldSnapshot,
        controlled: &[usize],
    ) -> Result<AdvisorResponse, HarnessError> {
        Ok(AdvisorResponse {
            advice: oracle_advise(snapshot, controlled)
                .into_iter()
                .map(|(agent, action)| AgentAdvice {
                    agent,
                    action: Some(action),
                    fallback: None,
                })
                .collect(),
            raw: None,
        })
    }
}
