//! Evaluation protocols: a one-off goal change with a short advisor window,
//! and static episodes where the advisor rescues agents that overrun a time
//! budget.

use std::sync::Arc;

use dtmapf_core::record::{Controller, EpisodeRecord};
use dtmapf_core::{AgentTask, Coord, EpisodeConfig, GridMap, WorldState};
use rand::seq::{index, IndexedRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::advisor::Advisor;
use crate::error::HarnessError;
use crate::policy::Policy;
use crate::runner::{run_episode, EpisodeHooks, StepControl};

pub const DEFAULT_WINDOW: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioMode {
    Static,
    StaticRescue,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvisorKind {
    None,
    Oracle,
    Llm,
}

impl AdvisorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AdvisorKind::None => "none",
            AdvisorKind::Oracle => "oracle",
            AdvisorKind::Llm => "llm",
        }
    }
}

/// Goal-change timestep for the benchmark map sizes.
pub fn t_change_for_size(size: usize) -> Option<u32> {
    match size {
        20 => Some(15),
        40 => Some(30),
        80 => Some(50),
        _ => None,
    }
}

/// A single goal change. Affected agents and their new goals are drawn when
/// the change fires, among the agents still active at that moment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalChangeEvent {
    pub t_change: u32,
    pub fraction: f64,
    /// `ceil(fraction * n_agents)`.
    pub count: usize,
    pub seed: u64,
}

impl GoalChangeEvent {
    /// Picks up to `count` active agents and a new goal for each: a free cell
    /// reachable from the agent, not its current cell, and distinct from every
    /// goal in force and from every other new goal.
    pub fn select(&self, world: &WorldState) -> Result<Vec<(usize, Coord)>, HarnessError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let active: Vec<usize> = world.agents.iter().filter(|a| !a.done).map(|a| a.id).collect();
        let k = self.count.min(active.len());
        let mut chosen: Vec<usize> = index::sample(&mut rng, active.len(), k)
            .into_iter()
            .map(|i| active[i])
            .collect();
        chosen.sort_unstable();
        let map = &world.map;
        let mut taken: Vec<Coord> = world.agents.iter().map(|a| a.goal).collect();
        if world.done_agents_block {
            taken.extend(world.agents.iter().filter(|a| a.done).map(|a| a.pos));
        }
        let mut out = Vec::with_capacity(k);
        for id in chosen {
            let pos = world.agents[id].pos;
            let dist = map.distances_from(pos);
            let candidates: Vec<Coord> = (0..map.cells())
                .filter(|&i| dist[i].is_some_and(|d| d > 0))
                .map(|i| map.coord(i))
                .filter(|c| !taken.contains(c))
                .collect();
            let goal = *candidates.choose(&mut rng).ok_or_else(|| {
                HarnessError::Scenario(format!("no valid new goal for agent {id} at {pos}"))
            })?;
            taken.push(goal);
            out.push((id, goal));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub mode: ScenarioMode,
    pub t_change: u32,
    pub fraction: f64,
    /// Advisor window length after the goal change.
    pub window: u32,
    pub advisor: AdvisorKind,
    /// Steps the policy gets before the rescue advisor takes over; half the
    /// horizon when unset.
    pub budget: Option<u32>,
    /// Hand every unfinished agent to the advisor during the window, not just
    /// the agents whose goals changed.
    pub advise_all_unfinished: bool,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            mode: ScenarioMode::Dynamic,
            t_change: 15,
            fraction: 0.25,
            window: DEFAULT_WINDOW,
            advisor: AdvisorKind::Oracle,
            budget: None,
            advise_all_unfinished: false,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self, horizon: u32) -> Result<(), HarnessError> {
        if self.mode == ScenarioMode::Dynamic && self.t_change + self.window >= horizon {
            return Err(HarnessError::Scenario(format!(
                "t_change {} + window {} must be below the horizon {horizon}",
                self.t_change, self.window
            )));
        }
        if self.mode == ScenarioMode::StaticRescue && self.rescue_budget(horizon) >= horizon {
            return Err(HarnessError::Scenario(format!(
                "rescue budget {} must be below the horizon {horizon}",
                self.rescue_budget(horizon)
            )));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(HarnessError::Scenario(format!(
                "fraction {} outside (0, 1]",
                self.fraction
            )));
        }
        Ok(())
    }

    pub fn rescue_budget(&self, horizon: u32) -> u32 {
        self.budget.unwrap_or(horizon / 2)
    }
}

/// Dynamic scenario for a benchmark map size.
pub fn make_scenario(
    map_size: usize,
    n_agents: usize,
    fraction: f64,
    seed: u64,
) -> Result<(GoalChangeEvent, ScenarioConfig), HarnessError> {
    let t_change = t_change_for_size(map_size).ok_or_else(|| {
        HarnessError::Scenario(format!(
            "no goal-change timestep defined for map size {map_size} (use 20, 40 or 80, or set t_change)"
        ))
    })?;
    scenario_at(t_change, n_agents, fraction, seed)
}

/// Dynamic scenario with an explicit goal-change timestep.
pub fn scenario_at(
    t_change: u32,
    n_agents: usize,
    fraction: f64,
    seed: u64,
) -> Result<(GoalChangeEvent, ScenarioConfig), HarnessError> {
    let count = (fraction * n_agents as f64 - 1e-9).ceil().max(0.0) as usize;
    if (fraction * n_agents as f64) < 1.0 - 1e-9 || fraction > 1.0 {
        return Err(HarnessError::Scenario(format!(
            "fraction {fraction} of {n_agents} agents selects no agent"
        )));
    }
    let event = GoalChangeEvent {
        t_change,
        fraction,
        count,
        seed,
    };
    let config = ScenarioConfig {
        mode: ScenarioMode::Dynamic,
        t_change,
        fraction,
        seed,
        ..ScenarioConfig::default()
    };
    Ok((event, config))
}

struct DynamicHooks {
    event: GoalChangeEvent,
    window: u32,
    advise_all_unfinished: bool,
    advised: Vec<usize>,
}

impl EpisodeHooks for DynamicHooks {
    fn before_step(&mut self, world: &mut WorldState, ctl: &mut StepControl<'_>) -> Result<(), HarnessError> {
        let t = ctl.t;
        if t == self.event.t_change {
            let changes = self.event.select(world)?;
            for (agent, goal) in &changes {
                ctl.change_goal(world, *agent, *goal)?;
            }
            self.advised = if self.advise_all_unfinished {
                world.agents.iter().filter(|a| !a.done).map(|a| a.id).collect()
            } else {
                changes.iter().map(|c| c.0).collect()
            };
            if self.window > 0 {
                for &a in &self.advised {
                    ctl.set_controller(a, Controller::Advisor);
                }
            }
        }
        if t == self.event.t_change + self.window {
            for &a in &self.advised {
                ctl.set_controller(a, Controller::Policy);
            }
        }
        Ok(())
    }
}

/// Policies drive every agent except that, for `window` steps from the goal
/// change, the selected agents follow the advisor. Without an advisor the
/// goal change still happens but nobody is taken over.
pub fn run_dynamic_episode(
    map: Arc<GridMap>,
    instance: &[AgentTask],
    policies: &mut [Box<dyn Policy>],
    advisor: Option<&mut dyn Advisor>,
    event: &GoalChangeEvent,
    scenario: &ScenarioConfig,
    config: &EpisodeConfig,
) -> Result<EpisodeRecord, HarnessError> {
    scenario.validate(config.horizon)?;
    let window = if advisor.is_some() { scenario.window } else { 0 };
    let mut hooks = DynamicHooks {
        event: event.clone(),
        window,
        advise_all_unfinished: scenario.advise_all_unfinished,
        advised: Vec::new(),
    };
    run_episode(map, instance, policies, advisor, config, &mut hooks)
}

struct RescueHooks {
    budget: u32,
}

impl EpisodeHooks for RescueHooks {
    fn before_step(&mut self, world: &mut WorldState, ctl: &mut StepControl<'_>) -> Result<(), HarnessError> {
        if ctl.t == self.budget {
            for a in world.agents.iter().filter(|a| !a.done) {
                ctl.set_controller(a.id, Controller::Advisor);
            }
        }
        Ok(())
    }
}

/// Policies drive all agents for `budget` steps; agents still unfinished then
/// follow the advisor until they arrive or the horizon ends the episode.
pub fn run_static_with_rescue(
    map: Arc<GridMap>,
    instance: &[AgentTask],
    policies: &mut [Box<dyn Policy>],
    advisor: &mut dyn Advisor,
    budget: u32,
    config: &EpisodeConfig,
) -> Result<EpisodeRecord, HarnessError> {
    if budget >= config.horizon {
        return Err(HarnessError::Scenario(format!(
            "rescue budget {budget} must be below the horizon {}",
            config.horizon
        )));
    }
    let mut hooks = RescueHooks { budget };
    run_episode(map, instance, policies, Some(advisor), config, &mut hooks)
}
