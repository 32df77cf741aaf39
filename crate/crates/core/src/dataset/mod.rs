//! Expert trajectories as (return-to-go, observation, action) sequences,
//! fixed-length chunks of them, and the on-disk corpus.

mod corpus;
mod format;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use corpus::{build_corpus, generate_corpus, ComboStats, CorpusSpec, DatasetMeta, EnvSpec, SkipRecord};
pub use format::{read_dataset, write_dataset, DatasetReader, FORMAT_VERSION, MAGIC, RECORD_BYTES};

use crate::env::{step_in_place, EpisodeConfig, WorldState};
use crate::error::DatasetError;
use crate::grid::{Action, AgentTask, GridMap};
use crate::observation::{observe, Observation};
use crate::planner::JointPlan;

/// Context length used by the corpus format.
pub const CONTEXT_LEN: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub rtg: f64,
    pub obs: Observation,
    pub action: Action,
    pub timestep: u32,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrajectory {
    pub episode_id: u64,
    pub agent_id: u32,
    pub transitions: Vec<Transition>,
}

impl AgentTrajectory {
    /// An agent that starts on its goal contributes no transitions.
    pub fn is_degenerate(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn total_return(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum()
    }
}

/// One stored slot of a chunk, at storage precision.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Slot {
    pub rtg: f32,
    pub action: u8,
    pub timestep: u16,
    pub obs: Observation,
}

impl From<&Transition> for Slot {
    fn from(t: &Transition) -> Self {
        Slot {
            rtg: t.rtg as f32,
            action: t.action.code(),
            timestep: t.timestep.min(u16::MAX as u32) as u16,
            obs: t.obs.clone(),
        }
    }
}

/// Fixed-length window of a trajectory. Real slots form a prefix; padded slots
/// are all zero with mask `false`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryChunk {
    pub episode_id: u64,
    pub agent_id: u32,
    pub chunk_index: u32,
    pub slots: Vec<Slot>,
    pub mask: Vec<bool>,
}

impl TrajectoryChunk {
    pub fn context_len(&self) -> usize {
        self.slots.len()
    }

    pub fn real_len(&self) -> usize {
        self.mask.iter().take_while(|m| **m).count()
    }

    pub fn real_slots(&self) -> &[Slot] {
        &self.slots[..self.real_len()]
    }

    /// Checks the prefix-mask and zero-padding invariants.
    pub fn is_well_formed(&self) -> bool {
        let n = self.real_len();
        self.mask.len() == self.slots.len()
            && self.mask[n..].iter().all(|m| !m)
            && self.slots[n..].iter().all(|s| *s == Slot::default())
            && self.slots[..n].iter().all(|s| s.action < Action::COUNT as u8)
    }
}

/// Suffix sums of `rewards`, undiscounted.
pub fn compute_rtg(rewards: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc += r;
        *o = acc;
    }
    out
}

/// Splits a trajectory into windows of `k` slots starting every `stride` slots.
/// With `stride == k` the windows tile the trajectory and there are
/// `ceil(len / k)` of them; the last one is zero-padded.
pub fn chunk(trajectory: &AgentTrajectory, k: usize, stride: usize) -> Vec<TrajectoryChunk> {
    assert!(k >= 1 && stride >= 1, "chunk length and stride must be positive");
    let slots: Vec<Slot> = trajectory.transitions.iter().map(Slot::from).collect();
    let mut out = Vec::new();
    let mut start = 0;
    while start < slots.len() {
        let end = (start + k).min(slots.len());
        let mut window: Vec<Slot> = slots[start..end].to_vec();
        let real = window.len();
        window.resize(k, Slot::default());
        out.push(TrajectoryChunk {
            episode_id: trajectory.episode_id,
            agent_id: trajectory.agent_id,
            chunk_index: out.len() as u32,
            slots: window,
            mask: (0..k).map(|i| i < real).collect(),
        });
        if end == slots.len() {
            break;
        }
        start += stride;
    }
    out
}

/// Concatenates the real slots of non-overlapping chunks.
pub fn dechunk(chunks: &[TrajectoryChunk]) -> Vec<Slot> {
    chunks.iter().flat_map(|c| c.real_slots().iter().cloned()).collect()
}

/// Replays `plan` through the environment and records, for every agent, the
/// observation before each step, the action implied by consecutive plan cells
/// and the reward the environment assigns. Returns one trajectory per agent.
pub fn rollout_expert(
    map: Arc<GridMap>,
    instance: &[AgentTask],
    plan: &JointPlan,
    config: &EpisodeConfig,
    episode_id: u64,
) -> Result<Vec<AgentTrajectory>, DatasetError> {
    if plan.paths.len() != instance.len() {
        return Err(DatasetError::Format(format!(
            "plan has {} paths for {} agents",
            plan.paths.len(),
            instance.len()
        )));
    }
    let mut state = WorldState::new(map, instance, config.done_agents_block)?;
    let n = instance.len();
    let mut trajs: Vec<AgentTrajectory> = (0..n)
        .map(|a| AgentTrajectory {
            episode_id,
            agent_id: a as u32,
            transitions: Vec::new(),
        })
        .collect();
    while !state.all_done() {
        let t = state.t;
        let mut actions = vec![Action::Wait; n];
        let mut observations = vec![None; n];
        for a in 0..n {
            if state.agents[a].done {
                continue;
            }
            let path = &plan.paths[a];
            let (Some(cur), Some(next)) = (path.get(t as usize), path.get(t as usize + 1)) else {
                return Err(DatasetError::Format(format!(
                    "agent {a} has no plan step at t={t}"
                )));
            };
            actions[a] = cur.action_to(*next).ok_or_else(|| {
                DatasetError::Format(format!("agent {a}: {cur} -> {next} is not a move"))
            })?;
            observations[a] = Some(observe(&state, a));
        }
        let result = step_in_place(&mut state, &actions, config)?;
        if let Some(c) = result.collisions.first() {
            return Err(DatasetError::ReplayCollision {
                agent: c.agent,
                t,
                kind: c.kind.as_str().into(),
            });
        }
        for (a, obs) in observations.into_iter().enumerate() {
            if let Some(obs) = obs {
                trajs[a].transitions.push(Transition {
                    rtg: 0.0,
                    obs,
                    action: actions[a],
                    timestep: t,
                    reward: result.rewards[a],
                });
            }
        }
    }
    for traj in &mut trajs {
        let rewards: Vec<f64> = traj.transitions.iter().map(|t| t.reward).collect();
        for (tr, rtg) in traj.transitions.iter_mut().zip(compute_rtg(&rewards)) {
            tr.rtg = rtg;
        }
    }
    Ok(trajs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Coord;
    use crate::planner::{plan_cbs, CbsConfig};

    fn traj(len: usize) -> AgentTrajectory {
        AgentTrajectory {
            episode_id: 3,
            agent_id: 1,
            transitions: (0..len)
                .map(|i| Transition {
                    rtg: 20.0 - 0.3 * i as f64,
                    obs: Observation::zeros(),
                    action: Action::from_code((i % 5) as u8).unwrap(),
                    timestep: i as u32,
                    reward: -0.3,
                })
                .collect(),
        }
    }

    #[test]
    fn rtg_is_suffix_sum() {
        let rtg = compute_rtg(&[-0.3, -0.3, 20.0]);
        let expected = [19.4, 19.7, 20.0];
        for (a, b) in rtg.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(compute_rtg(&[]).is_empty());
    }

    #[test]
    fn chunk_lengths() {
        let lens = |n| {
            chunk(&traj(n), 50, 50)
                .iter()
                .map(|c| c.real_len())
                .collect::<Vec<_>>()
        };
        assert_eq!(lens(120), vec![50, 50, 20]);
        assert_eq!(lens(50), vec![50]);
        assert!(lens(0).is_empty());
        let cs = chunk(&traj(120), 50, 50);
        assert!(cs.iter().all(|c| c.is_well_formed() && c.context_len() == 50));
        assert_eq!(cs[2].chunk_index, 2);
    }

    #[test]
    fn overlapping_stride() {
        let cs = chunk(&traj(10), 4, 2);
        let starts: Vec<u16> = cs.iter().map(|c| c.slots[0].timestep).collect();
        assert_eq!(starts, vec![0, 2, 4, 6]);
        assert_eq!(cs.last().unwrap().real_len(), 4);
    }

    #[test]
    fn single_agent_rollout_rewards() {
        let map = Arc::new(GridMap::empty(5, 5));
        let inst = [AgentTask {
            start: Coord::new(0, 0),
            goal: Coord::new(0, 3),
        }];
        let plan = plan_cbs(&map, &inst, &CbsConfig::default()).unwrap();
        let trajs = rollout_expert(map, &inst, &plan, &EpisodeConfig::default(), 0).unwrap();
        let rewards: Vec<f64> = trajs[0].transitions.iter().map(|t| t.reward).collect();
        assert_eq!(rewards.len(), 3);
        for (a, b) in rewards.iter().zip([-0.3, -0.3, 19.7]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((trajs[0].transitions[0].rtg - 19.1).abs() < 1e-12);
        assert!(trajs[0].transitions.iter().all(|t| t.action == Action::East));
    }

    #[test]
    fn agent_on_goal_is_degenerate() {
        let map = Arc::new(GridMap::empty(5, 5));
        let inst = [
            AgentTask {
                start: Coord::new(2, 2),
                goal: Coord::new(2, 2),
            },
            AgentTask {
                start: Coord::new(0, 0),
                goal: Coord::new(0, 1),
            },
        ];
        let plan = plan_cbs(&map, &inst, &CbsConfig::default()).unwrap();
        let trajs = rollout_expert(map, &inst, &plan, &EpisodeConfig::default(), 0).unwrap();
        assert!(trajs[0].is_degenerate());
        assert_eq!(trajs[1].transitions.len(), 1);
    }

    #[test]
    fn colliding_plan_is_a_hard_error() {
        let map = Arc::new(GridMap::empty(3, 1));
        let inst = [
            AgentTask {
                start: Coord::new(0, 0),
                goal: Coord::new(0, 2),
            },
            AgentTask {
                start: Coord::new(0, 2),
                goal: Coord::new(0, 0),
            },
        ];
        let plan = JointPlan::from_paths(vec![
            vec![Coord::new(0, 0), Coord::new(0, 1), Coord::new(0, 2)],
            vec![Coord::new(0, 2), Coord::new(0, 1), Coord::new(0, 0)],
        ]);
        assert!(matches!(
            rollout_expert(map, &inst, &plan, &EpisodeConfig::default(), 0),
            Err(DatasetError::ReplayCollision { .. })
        ));
    }
}
