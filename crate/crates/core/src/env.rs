//! Deterministic multi-agent grid world: joint transitions, rewards and
//! termination.
//!
//! A joint step is resolved in a fixed order:
//!
//! 1. every active agent's intended cell is computed from its action;
//! 2. moves leaving the map or entering an obstacle are cancelled;
//! 3. vertex conflicts (two agents claiming one cell) and edge conflicts
//!    (two agents swapping cells) cancel the moves involved, repeated until
//!    no further cancellation happens, so a cancelled agent can in turn block
//!    an agent that was following it;
//! 4. surviving moves are applied and rewards assigned;
//! 5. agents standing on their goal afterwards are marked done.
//!
//! Done agents leave the board unless [`EpisodeConfig::done_agents_block`] is set.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::EnvError;
use crate::grid::{Action, AgentTask, Coord, GridMap};

/// Per-step reward constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub move_reward: f64,
    pub wait_on_goal: f64,
    pub wait_off_goal: f64,
    pub collision: f64,
    pub goal: f64,
    pub episode_bonus: f64,
    pub episode_bonus_enabled: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            move_reward: -0.3,
            wait_on_goal: 0.0,
            wait_off_goal: -0.5,
            collision: -5.0,
            goal: 20.0,
            episode_bonus: 20.0,
            episode_bonus_enabled: false,
        }
    }
}

pub const FOV: usize = 10;
pub const DEFAULT_HORIZON: u32 = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub horizon: u32,
    pub fov: usize,
    /// Discount factor of the decision process. Returns-to-go are undiscounted
    /// and never read this.
    pub gamma: f64,
    pub seed: u64,
    pub rewards: RewardConfig,
    /// Keep done agents on their goal cell as permanent blockers.
    pub done_agents_block: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            fov: FOV,
            gamma: 1.0,
            seed: 0,
            rewards: RewardConfig::default(),
            done_agents_block: false,
        }
    }
}

impl EpisodeConfig {
    pub fn with_horizon(horizon: u32) -> Self {
        Self {
            horizon,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.horizon == 0 {
            return Err(EnvError::InvalidInstance("horizon must be >= 1".into()));
        }
        if self.fov != FOV {
            return Err(EnvError::InvalidInstance(format!(
                "fov must be {FOV}, got {}",
                self.fov
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: usize,
    pub pos: Coord,
    pub goal: Coord,
    pub done: bool,
    pub arrival_time: Option<u32>,
}

/// Joint state: static map, agents and the global clock.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub map: Arc<GridMap>,
    pub agents: Vec<AgentState>,
    pub t: u32,
    pub done_agents_block: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionKind {
    Obstacle,
    OutOfBounds,
    Vertex,
    Edge,
}

impl CollisionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CollisionKind::Obstacle => "obstacle",
            CollisionKind::OutOfBounds => "out_of_bounds",
            CollisionKind::Vertex => "vertex",
            CollisionKind::Edge => "edge",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Collision {
    pub agent: usize,
    pub kind: CollisionKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub rewards: Vec<f64>,
    pub collisions: Vec<Collision>,
    pub newly_done: Vec<usize>,
    pub all_done: bool,
}

impl WorldState {
    /// Places agents on their starts at t=0. An agent spawned on its goal is done
    /// with arrival time 0.
    pub fn new(
        map: Arc<GridMap>,
        instance: &[AgentTask],
        done_agents_block: bool,
    ) -> Result<Self, EnvError> {
        let mut seen_start = HashMap::new();
        let mut seen_goal = HashMap::new();
        for (i, task) in instance.iter().enumerate() {
            for (what, c) in [("start", task.start), ("goal", task.goal)] {
                if !map.is_free(c) {
                    return Err(EnvError::InvalidInstance(format!(
                        "agent {i} {what} {c} is not a free cell"
                    )));
                }
            }
            if let Some(j) = seen_start.insert(task.start, i) {
                return Err(EnvError::InvalidInstance(format!(
                    "agents {j} and {i} share start {}",
                    task.start
                )));
            }
            if let Some(j) = seen_goal.insert(task.goal, i) {
                return Err(EnvError::InvalidInstance(format!(
                    "agents {j} and {i} share goal {}",
                    task.goal
                )));
            }
        }
        let agents = instance
            .iter()
            .enumerate()
            .map(|(id, task)| {
                let at_goal = task.start == task.goal;
                AgentState {
                    id,
                    pos: task.start,
                    goal: task.goal,
                    done: at_goal,
                    arrival_time: at_goal.then_some(0),
                }
            })
            .collect();
        Ok(Self {
            map,
            agents,
            t: 0,
            done_agents_block,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn all_done(&self) -> bool {
        self.agents.iter().all(|a| a.done)
    }

    /// Whether agent `a` currently occupies its cell.
    pub fn occupies(&self, a: &AgentState) -> bool {
        !a.done || self.done_agents_block
    }

    /// Ids of agents occupying `c`.
    pub fn occupant(&self, c: Coord) -> Option<usize> {
        self.agents
            .iter()
            .find(|a| a.pos == c && self.occupies(a))
            .map(|a| a.id)
    }

    /// Assigns a new goal. A done agent is reactivated only when the board keeps
    /// done agents; otherwise goal changes are restricted to active agents.
    pub fn set_goal(&mut self, agent: usize, goal: Coord) -> Result<(), EnvError> {
        if !self.map.is_free(goal) {
            return Err(EnvError::InvalidInstance(format!(
                "new goal {goal} is not a free cell"
            )));
        }
        let a = self
            .agents
            .get_mut(agent)
            .ok_or(EnvError::UnknownAgent(agent))?;
        if a.done {
            return Err(EnvError::InvalidInstance(format!(
                "agent {agent} is already done"
            )));
        }
        a.goal = goal;
        Ok(())
    }

    /// Checks occupancy safety. Returns a description of the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut cells = HashMap::new();
        for a in &self.agents {
            if !self.map.is_free(a.pos) {
                return Err(format!("agent {} on blocked cell {}", a.id, a.pos));
            }
            if a.done != a.arrival_time.is_some() {
                return Err(format!("agent {} done flag disagrees with arrival", a.id));
            }
            if self.occupies(a) {
                if let Some(other) = cells.insert(a.pos, a.id) {
                    return Err(format!("agents {other} and {} share {}", a.id, a.pos));
                }
            }
        }
        Ok(())
    }

    pub fn to_ascii(&self) -> String {
        let mut grid: Vec<Vec<char>> = self
            .map
            .to_ascii()
            .lines()
            .map(|l| l.chars().collect())
            .collect();
        for a in self.agents.iter().filter(|a| self.occupies(a)) {
            grid[a.pos.row as usize][a.pos.col as usize] = agent_letter(a.id);
        }
        let mut out = String::new();
        for row in grid {
            out.extend(row);
            out.push('\n');
        }
        out
    }
}

fn agent_letter(id: usize) -> char {
    const LETTERS: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz";
    LETTERS.get(id).map_or('@', |b| *b as char)
}

pub fn is_terminal(state: &WorldState, config: &EpisodeConfig) -> bool {
    state.all_done() || state.t >= config.horizon
}

/// Pure transition: returns the successor state and the step outcome.
pub fn step(
    state: &WorldState,
    joint_action: &[Action],
    config: &EpisodeConfig,
) -> Result<(WorldState, StepResult), EnvError> {
    let mut next = state.clone();
    let result = step_in_place(&mut next, joint_action, config)?;
    Ok((next, result))
}

/// In-place variant of [`step`]. On error the state is untouched.
pub fn step_in_place(
    state: &mut WorldState,
    joint_action: &[Action],
    config: &EpisodeConfig,
) -> Result<StepResult, EnvError> {
    let n = state.agents.len();
    if joint_action.len() != n {
        return Err(EnvError::ActionCount {
            expected: n,
            got: joint_action.len(),
        });
    }
    if is_terminal(state, config) {
        return Err(EnvError::Terminated(state.t));
    }
    let rewards_cfg = &config.rewards;

    // Agents taking part in resolution: active ones, plus done blockers that never move.
    let participates: Vec<bool> = state.agents.iter().map(|a| state.occupies(a)).collect();
    let active: Vec<bool> = state.agents.iter().map(|a| !a.done).collect();
    let pos: Vec<Coord> = state.agents.iter().map(|a| a.pos).collect();
    let mut target = pos.clone();
    let mut collision: Vec<Option<CollisionKind>> = vec![None; n];

    for i in 0..n {
        if !active[i] {
            continue;
        }
        let want = pos[i].offset(joint_action[i]);
        if !state.map.in_bounds(want) {
            collision[i] = Some(CollisionKind::OutOfBounds);
        } else if state.map.is_obstacle(want) {
            collision[i] = Some(CollisionKind::Obstacle);
        } else {
            target[i] = want;
        }
    }

    // Fixed point over vertex and edge conflicts.
    let mut claims: HashMap<Coord, Vec<usize>> = HashMap::new();
    loop {
        let mut changed = false;
        claims.clear();
        for i in (0..n).filter(|&i| participates[i]) {
            claims.entry(target[i]).or_default().push(i);
        }
        let mut cancel = Vec::new();
        for agents in claims.values().filter(|v| v.len() > 1) {
            cancel.extend(agents.iter().copied().filter(|&i| target[i] != pos[i]));
        }
        cancel.sort_unstable();
        for i in cancel {
            target[i] = pos[i];
            collision[i] = Some(CollisionKind::Vertex);
            changed = true;
        }
        if !changed {
            // Swaps only need checking once vertex claims are settled.
            let by_pos: HashMap<Coord, usize> = (0..n)
                .filter(|&i| participates[i])
                .map(|i| (pos[i], i))
                .collect();
            let mut swapped = Vec::new();
            for i in (0..n).filter(|&i| participates[i] && target[i] != pos[i]) {
                if let Some(&j) = by_pos.get(&target[i]) {
                    if j != i && target[j] == pos[i] {
                        swapped.push(i);
                    }
                }
            }
            for i in swapped {
                target[i] = pos[i];
                collision[i] = Some(CollisionKind::Edge);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut rewards = vec![0.0; n];
    let mut collisions = Vec::new();
    for i in (0..n).filter(|&i| active[i]) {
        let agent = &mut state.agents[i];
        if let Some(kind) = collision[i] {
            rewards[i] = rewards_cfg.collision;
            collisions.push(Collision { agent: i, kind });
        } else if joint_action[i].is_move() {
            rewards[i] = rewards_cfg.move_reward;
            agent.pos = target[i];
        } else if agent.pos == agent.goal {
            rewards[i] = rewards_cfg.wait_on_goal;
        } else {
            rewards[i] = rewards_cfg.wait_off_goal;
        }
    }

    state.t += 1;
    let mut newly_done = Vec::new();
    for i in (0..n).filter(|&i| active[i]) {
        let agent = &mut state.agents[i];
        if agent.pos == agent.goal {
            agent.done = true;
            agent.arrival_time = Some(state.t);
            rewards[i] += rewards_cfg.goal;
            newly_done.push(i);
        }
    }
    let all_done = state.all_done();
    if all_done && !newly_done.is_empty() && rewards_cfg.episode_bonus_enabled {
        for r in rewards.iter_mut() {
            *r += rewards_cfg.episode_bonus;
        }
    }
    Ok(StepResult {
        rewards,
        collisions,
        newly_done,
        all_done,
    })
}
