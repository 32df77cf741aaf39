//! Full trace of one evaluation episode.

use serde::{Deserialize, Serialize};

use crate::env::{CollisionKind, WorldState};
use crate::error::MetricsError;
use crate::grid::{Action, Coord};

/// Which controller chose an agent's action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    /// The agent's own decentralized policy (the DT, or a scripted stand-in).
    Policy,
    Advisor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionEvent {
    /// Clock at the start of the step in which the collision happened.
    pub t: u32,
    pub agent: usize,
    pub kind: CollisionKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ScenarioEvent {
    GoalChange {
        t: u32,
        agent: usize,
        old_goal: Coord,
        new_goal: Coord,
    },
    ControllerSwitch {
        t: u32,
        agent: usize,
        from: Controller,
        to: Controller,
    },
    AdvisorFallback {
        t: u32,
        agent: usize,
        reason: String,
    },
    PolicyError {
        t: u32,
        agent: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub horizon: u32,
    /// Final clock value.
    pub duration: u32,
    pub starts: Vec<Coord>,
    /// Goals in force at the end of the episode.
    pub goals: Vec<Coord>,
    /// `positions[agent][t]` for `t` in `0..=duration`.
    pub positions: Vec<Vec<Coord>>,
    /// `actions[agent][t]` for `t` in `0..duration`; `None` once the agent is done.
    pub actions: Vec<Vec<Option<Action>>>,
    pub controllers: Vec<Vec<Option<Controller>>>,
    pub rewards: Vec<Vec<f64>>,
    pub collisions: Vec<CollisionEvent>,
    pub arrival_times: Vec<Option<u32>>,
    pub events: Vec<ScenarioEvent>,
}

impl EpisodeRecord {
    /// Empty trace seeded with the initial state.
    pub fn start(state: &WorldState, horizon: u32) -> Self {
        let n = state.n_agents();
        Self {
            horizon,
            duration: state.t,
            starts: state.agents.iter().map(|a| a.pos).collect(),
            goals: state.agents.iter().map(|a| a.goal).collect(),
            positions: state.agents.iter().map(|a| vec![a.pos]).collect(),
            actions: vec![Vec::new(); n],
            controllers: vec![Vec::new(); n],
            rewards: vec![Vec::new(); n],
            collisions: Vec::new(),
            arrival_times: state.agents.iter().map(|a| a.arrival_time).collect(),
            events: Vec::new(),
        }
    }

    pub fn n_agents(&self) -> usize {
        self.starts.len()
    }

    pub fn agent_success(&self, agent: usize) -> bool {
        self.arrival_times[agent].is_some_and(|t| t <= self.horizon)
    }

    pub fn success(&self) -> bool {
        (0..self.n_agents()).all(|a| self.agent_success(a))
    }

    /// Timesteps at which `agent` acted under the advisor.
    pub fn advisor_steps(&self, agent: usize) -> Vec<u32> {
        self.controllers[agent]
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == Some(Controller::Advisor))
            .map(|(t, _)| t as u32)
            .collect()
    }

    pub fn total_advisor_steps(&self) -> usize {
        (0..self.n_agents())
            .map(|a| self.advisor_steps(a).len())
            .sum()
    }

    pub fn check_consistency(&self) -> Result<(), MetricsError> {
        let n = self.n_agents();
        let bad = |m: String| Err(MetricsError::Inconsistent(m));
        let d = self.duration as usize;
        if [
            self.goals.len(),
            self.positions.len(),
            self.actions.len(),
            self.controllers.len(),
            self.rewards.len(),
            self.arrival_times.len(),
        ]
        .iter()
        .any(|&l| l != n)
        {
            return bad("per-agent vectors disagree on agent count".into());
        }
        if self.duration > self.horizon {
            return bad(format!(
                "duration {} exceeds horizon {}",
                self.duration, self.horizon
            ));
        }
        for a in 0..n {
            if self.positions[a].len() != d + 1 {
                return bad(format!("agent {a}: {} positions for duration {d}", self.positions[a].len()));
            }
            if self.actions[a].len() != d || self.controllers[a].len() != d || self.rewards[a].len() != d {
                return bad(format!("agent {a}: action/reward trace length mismatch"));
            }
            if let Some(t) = self.arrival_times[a] {
                if t as usize > d {
                    return bad(format!("agent {a}: arrival {t} after episode end {d}"));
                }
                if self.positions[a][t as usize] != self.goals[a] {
                    return bad(format!("agent {a}: not on goal at arrival time {t}"));
                }
                if self.actions[a][t as usize..].iter().any(Option::is_some) {
                    return bad(format!("agent {a}: acted after arriving"));
                }
            }
        }
        for c in &self.collisions {
            if c.agent >= n || c.t >= self.duration {
                return bad(format!("collision entry {c:?} out of range"));
            }
        }
        Ok(())
    }

    /// Per-timestep text frames of the board.
    pub fn ascii_frames(&self, map: &crate::grid::GridMap) -> Vec<String> {
        let base: Vec<Vec<char>> = map.to_ascii().lines().map(|l| l.chars().collect()).collect();
        (0..=self.duration as usize)
            .map(|t| {
                let mut grid = base.clone();
                for a in 0..self.n_agents() {
                    let gone = self.arrival_times[a].is_some_and(|arr| (arr as usize) < t);
                    if gone {
                        continue;
                    }
                    let p = self.positions[a][t];
                    grid[p.row as usize][p.col as usize] = agent_char(a);
                }
                let mut s = format!("t={t}\n");
                for row in grid {
                    s.extend(row);
                    s.push('\n');
                }
                s
            })
            .collect()
    }
}

fn agent_char(a: usize) -> char {
    const LETTERS: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz";
    LETTERS.get(a).map_or('@', |b| *b as char)
}
