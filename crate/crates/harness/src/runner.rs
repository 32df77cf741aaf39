//! The observe, act, step loop.

use std::sync::Arc;

use dtmapf_core::record::{CollisionEvent, Controller, EpisodeRecord, ScenarioEvent};
use dtmapf_core::{
    is_terminal, observe, step_in_place, Action, AgentTask, Coord, EpisodeConfig, GridMap,
    WorldState,
};

use crate::advisor::{Advisor, WorldSnapshot};
use crate::error::HarnessError;
use crate::policy::Policy;

/// What a hook may change before a step: goals and the controller of each agent.
pub struct StepControl<'a> {
    pub t: u32,
    controllers: &'a mut [Controller],
    events: &'a mut Vec<ScenarioEvent>,
    goal_changed: Vec<usize>,
}

impl StepControl<'_> {
    pub fn controller(&self, agent: usize) -> Controller {
        self.controllers[agent]
    }

    pub fn set_controller(&mut self, agent: usize, to: Controller) {
        let from = self.controllers[agent];
        if from != to {
            self.controllers[agent] = to;
            self.events.push(ScenarioEvent::ControllerSwitch {
                t: self.t,
                agent,
                from,
                to,
            });
        }
    }

    /// Replaces an active agent's goal and notifies its policy before it acts.
    pub fn change_goal(
        &mut self,
        world: &mut WorldState,
        agent: usize,
        goal: Coord,
    ) -> Result<(), HarnessError> {
        let old_goal = world
            .agents
            .get(agent)
            .map(|a| a.goal)
            .ok_or(dtmapf_core::EnvError::UnknownAgent(agent))?;
        world.set_goal(agent, goal)?;
        self.events.push(ScenarioEvent::GoalChange {
            t: self.t,
            agent,
            old_goal,
            new_goal: goal,
        });
        self.goal_changed.push(agent);
        Ok(())
    }
}

pub trait EpisodeHooks {
    /// Runs at the start of every timestep, before observations are taken.
    fn before_step(
        &mut self,
        world: &mut WorldState,
        ctl: &mut StepControl<'_>,
    ) -> Result<(), HarnessError>;
}

pub struct NoHooks;

impl EpisodeHooks for NoHooks {
    fn before_step(&mut self, _: &mut WorldState, _: &mut StepControl<'_>) -> Result<(), HarnessError> {
        Ok(())
    }
}

/// Runs one episode to termination (all agents done or the horizon reached).
///
/// Policy errors do not abort the episode: the failing agent waits for that
/// step and the error is kept in the record.
pub fn run_episode(
    map: Arc<GridMap>,
    instance: &[AgentTask],
    policies: &mut [Box<dyn Policy>],
    mut advisor: Option<&mut dyn Advisor>,
    config: &EpisodeConfig,
    hooks: &mut dyn EpisodeHooks,
) -> Result<EpisodeRecord, HarnessError> {
    config.validate()?;
    let n = instance.len();
    if policies.len() != n {
        return Err(HarnessError::Config(format!(
            "{} policies for {n} agents",
            policies.len()
        )));
    }
    let mut world = WorldState::new(map, instance, config.done_agents_block)?;
    let mut record = EpisodeRecord::start(&world, config.horizon);
    let mut controllers = vec![Controller::Policy; n];

    while !is_terminal(&world, config) {
        let t = world.t;
        let goal_changed = {
            let mut ctl = StepControl {
                t,
                controllers: &mut controllers,
                events: &mut record.events,
                goal_changed: Vec::new(),
            };
            hooks.before_step(&mut world, &mut ctl)?;
            ctl.goal_changed
        };
        for a in goal_changed {
            policies[a].on_goal_change();
        }

        let active: Vec<usize> = (0..n).filter(|&a| !world.agents[a].done).collect();
        let obs: Vec<_> = active.iter().map(|&a| (a, observe(&world, a))).collect();
        let advised: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&a| controllers[a] == Controller::Advisor)
            .collect();
        let mut advice = vec![None; n];
        if !advised.is_empty() {
            let adv = advisor
                .as_deref_mut()
                .ok_or(HarnessError::NoAdvisor { agent: advised[0], t })?;
            let response = adv.advise(&WorldSnapshot::from_world(&world), &advised)?;
            for a in &advised {
                let item = response.get(*a);
                if let Some(reason) = item.and_then(|i| i.fallback.clone()) {
                    record.events.push(ScenarioEvent::AdvisorFallback { t, agent: *a, reason });
                }
                advice[*a] = item.and_then(|i| i.action);
            }
        }

        let mut joint = vec![Action::Wait; n];
        let mut chosen_by = vec![None; n];
        for (a, o) in &obs {
            let a = *a;
            if let Some(action) = advice[a] {
                policies[a].observe_external(o, action, t);
                joint[a] = action;
                chosen_by[a] = Some(Controller::Advisor);
                continue;
            }
            joint[a] = match policies[a].act(o, t) {
                Ok(action) => action,
                Err(e) => {
                    record.events.push(ScenarioEvent::PolicyError {
                        t,
                        agent: a,
                        message: e.0,
                    });
                    Action::Wait
                }
            };
            chosen_by[a] = Some(Controller::Policy);
        }

        let result = step_in_place(&mut world, &joint, config)?;
        for a in 0..n {
            let acted = chosen_by[a].is_some();
            record.actions[a].push(acted.then_some(joint[a]));
            record.controllers[a].push(chosen_by[a]);
            record.rewards[a].push(result.rewards[a]);
            record.positions[a].push(world.agents[a].pos);
            if acted {
                policies[a].record_reward(result.rewards[a]);
            }
        }
        record.collisions.extend(result.collisions.iter().map(|c| CollisionEvent {
            t,
            agent: c.agent,
            kind: c.kind,
        }));
    }

    record.duration = world.t;
    record.goals = world.agents.iter().map(|a| a.goal).collect();
    record.arrival_times = world.agents.iter().map(|a| a.arrival_time).collect();
    Ok(record)
}
