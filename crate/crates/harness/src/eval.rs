//! Seeded batches of evaluation episodes.

use std::sync::Arc;

use dtmapf_core::metrics::GroupKey;
use dtmapf_core::record::EpisodeRecord;
use dtmapf_core::seed::derive;
use dtmapf_core::{generate_map, sample_instance, EpisodeConfig};
use serde::{Deserialize, Serialize};

use crate::advisor::Advisor;
use crate::error::HarnessError;
use crate::policy::Policy;
use crate::runner::{run_episode, NoHooks};
use crate::scenario::{
    run_dynamic_episode, run_static_with_rescue, t_change_for_size, AdvisorKind, GoalChangeEvent,
    ScenarioConfig, ScenarioMode,
};

/// One row of an evaluation sweep. Episode `i` uses map, instance and
/// goal-change seeds derived from `seed` and `i`, so runs that differ only in
/// the advisor see the same worlds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSpec {
    pub map_size: usize,
    pub n_agents: usize,
    pub density: f64,
    pub episodes: usize,
    pub seed: u64,
    pub horizon: u32,
    /// Overrides the per-size goal-change timestep.
    pub t_change: Option<u32>,
    pub scenario: ScenarioConfig,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            map_size: 20,
            n_agents: 8,
            density: 0.0,
            episodes: 10,
            seed: 0,
            horizon: 256,
            t_change: None,
            scenario: ScenarioConfig::default(),
        }
    }
}

impl EvalSpec {
    pub fn key(&self) -> GroupKey {
        GroupKey {
            map_size: Some(self.map_size),
            n_agents: Some(self.n_agents),
            density: Some(self.density),
            advisor: Some(self.scenario.advisor.as_str().to_string()),
            fraction: (self.scenario.mode == ScenarioMode::Dynamic).then_some(self.scenario.fraction),
        }
    }

    pub fn resolved_t_change(&self) -> Result<u32, HarnessError> {
        self.t_change
            .or_else(|| t_change_for_size(self.map_size))
            .ok_or_else(|| {
                HarnessError::Scenario(format!(
                    "map size {} has no default goal-change timestep; set t_change",
                    self.map_size
                ))
            })
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalOutcome {
    pub records: Vec<(GroupKey, EpisodeRecord)>,
    /// Episodes that could not be set up, with the reason.
    pub skipped: Vec<(usize, String)>,
}

/// Runs every episode of `spec`. `make_policies(n)` supplies fresh policies
/// for an `n`-agent episode.
pub fn run_eval(
    spec: &EvalSpec,
    make_policies: &mut dyn FnMut(usize) -> Vec<Box<dyn Policy>>,
    mut advisor: Option<&mut dyn Advisor>,
) -> Result<EvalOutcome, HarnessError> {
    if spec.scenario.advisor != AdvisorKind::None && advisor.is_none() {
        return Err(HarnessError::Config(format!(
            "spec asks for the {} advisor but none was supplied",
            spec.scenario.advisor.as_str()
        )));
    }
    let config = EpisodeConfig {
        seed: spec.seed,
        ..EpisodeConfig::with_horizon(spec.horizon)
    };
    let mut scenario = spec.scenario.clone();
    if scenario.mode == ScenarioMode::Dynamic {
        scenario.t_change = spec.resolved_t_change()?;
    }
    scenario.validate(spec.horizon)?;
    let key = spec.key();
    let mut out = EvalOutcome::default();
    for i in 0..spec.episodes {
        let idx = i as u64;
        let map = match generate_map(spec.map_size, spec.map_size, spec.density, derive(spec.seed, "eval-map", idx)) {
            Ok(m) => Arc::new(m),
            Err(e) => {
                out.skipped.push((i, e.to_string()));
                continue;
            }
        };
        let instance = match sample_instance(&map, spec.n_agents, derive(spec.seed, "eval-instance", idx)) {
            Ok(inst) => inst,
            Err(e) => {
                out.skipped.push((i, e.to_string()));
                continue;
            }
        };
        let mut policies = make_policies(instance.len());
        let adv = match scenario.advisor {
            AdvisorKind::None => None,
            _ => advisor.as_mut().map(|a| &mut **a as &mut dyn Advisor),
        };
        let result = match scenario.mode {
            ScenarioMode::Static => run_episode(map, &instance, &mut policies, None, &config, &mut NoHooks),
            ScenarioMode::StaticRescue => match adv {
                Some(a) => run_static_with_rescue(
                    map,
                    &instance,
                    &mut policies,
                    a,
                    scenario.rescue_budget(spec.horizon),
                    &config,
                ),
                None => run_episode(map, &instance, &mut policies, None, &config, &mut NoHooks),
            },
            ScenarioMode::Dynamic => {
                let event = GoalChangeEvent {
                    t_change: scenario.t_change,
                    fraction: scenario.fraction,
                    count: ((scenario.fraction * spec.n_agents as f64) - 1e-9).ceil().max(1.0) as usize,
                    seed: derive(spec.seed, "eval-change", idx),
                };
                run_dynamic_episode(map, &instance, &mut policies, adv, &event, &scenario, &config)
            }
        };
        match result {
            Ok(record) => out.records.push((key.clone(), record)),
            Err(HarnessError::Scenario(reason)) => out.skipped.push((i, reason)),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
