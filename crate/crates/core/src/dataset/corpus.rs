use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{EpisodeConfig, RewardConfig, DEFAULT_HORIZON};
use crate::error::DatasetError;
use crate::grid::{generate_map, sample_instance};
use crate::planner::{plan_with_fallback, CbsConfig, Planner};
use crate::seed::derive;

use super::format::write_dataset;
use super::{chunk, rollout_expert, TrajectoryChunk, CONTEXT_LEN};

/// Parameter grid of the expert corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub agent_counts: Vec<usize>,
    pub grid_sizes: Vec<usize>,
    pub densities: Vec<f64>,
    pub envs_per_combination: usize,
    pub seed: u64,
    pub horizon: u32,
    pub node_budget: usize,
    /// Add the +20 bonus when every agent has arrived.
    pub episode_bonus: bool,
    pub context_len: usize,
    pub stride: usize,
    /// Keep finished agents on their goals as obstacles.
    pub hold_goal: bool,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self::paper()
    }
}

impl CorpusSpec {
    /// Full-scale grid: 4 agent counts x 4 sizes x 3 densities x 80 maps.
    pub fn paper() -> Self {
        Self {
            agent_counts: vec![4, 16, 32, 64],
            grid_sizes: vec![10, 20, 40, 80],
            densities: vec![0.0, 0.1, 0.2],
            envs_per_combination: 80,
            seed: 0,
            horizon: DEFAULT_HORIZON,
            node_budget: 100_000,
            episode_bonus: false,
            context_len: CONTEXT_LEN,
            stride: CONTEXT_LEN,
            hold_goal: false,
        }
    }

    /// Small grid that builds in seconds.
    pub fn desk() -> Self {
        Self {
            agent_counts: vec![4, 8],
            grid_sizes: vec![10, 20],
            densities: vec![0.0, 0.1],
            envs_per_combination: 5,
            ..Self::paper()
        }
    }

    pub fn combinations(&self) -> usize {
        self.grid_sizes.len() * self.agent_counts.len() * self.densities.len()
    }

    /// All environments in a fixed order: size, then agent count, then
    /// density, then map index.
    pub fn enumerate(&self) -> Vec<EnvSpec> {
        let mut out = Vec::with_capacity(self.combinations() * self.envs_per_combination);
        let mut combo = 0;
        for &map_size in &self.grid_sizes {
            for &n_agents in &self.agent_counts {
                for &density in &self.densities {
                    for env_index in 0..self.envs_per_combination {
                        let index = out.len() as u64;
                        out.push(EnvSpec {
                            index,
                            combination: combo,
                            map_size,
                            n_agents,
                            density,
                            env_index,
                            map_seed: derive(self.seed, "corpus-map", index),
                            instance_seed: derive(self.seed, "corpus-instance", index),
                        });
                    }
                    combo += 1;
                }
            }
        }
        out
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            horizon: self.horizon,
            seed: self.seed,
            rewards: RewardConfig {
                episode_bonus_enabled: self.episode_bonus,
                ..RewardConfig::default()
            },
            done_agents_block: self.hold_goal,
            ..EpisodeConfig::default()
        }
    }

    fn validate(&self) -> Result<(), DatasetError> {
        if self.context_len == 0 || self.context_len > u8::MAX as usize || self.stride == 0 {
            return Err(DatasetError::Format(format!(
                "context length {} / stride {} out of range",
                self.context_len, self.stride
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    /// Global position in the enumeration; also the episode id.
    pub index: u64,
    pub combination: usize,
    pub map_size: usize,
    pub n_agents: usize,
    pub density: f64,
    pub env_index: usize,
    pub map_seed: u64,
    pub instance_seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComboStats {
    pub map_size: usize,
    pub n_agents: usize,
    pub density: f64,
    pub instances: usize,
    pub solved_cbs: usize,
    pub solved_prioritized: usize,
    pub skipped: usize,
    pub trajectories: usize,
    pub degenerate: usize,
    pub transitions: usize,
    pub chunks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub index: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub spec: CorpusSpec,
    pub combos: Vec<ComboStats>,
    pub skips: Vec<SkipRecord>,
    pub episodes: usize,
    pub chunks: usize,
}

enum EnvOutcome {
    Built {
        planner: Planner,
        trajectories: usize,
        degenerate: usize,
        transitions: usize,
        chunks: Vec<TrajectoryChunk>,
    },
    Skipped(String),
}

fn build_env(spec: &CorpusSpec, env: &EnvSpec, config: &EpisodeConfig) -> Result<EnvOutcome, DatasetError> {
    let map = match generate_map(env.map_size, env.map_size, env.density, env.map_seed) {
        Ok(m) => Arc::new(m),
        Err(e) => return Ok(EnvOutcome::Skipped(e.to_string())),
    };
    let instance = match sample_instance(&map, env.n_agents, env.instance_seed) {
        Ok(i) => i,
        Err(e) => return Ok(EnvOutcome::Skipped(e.to_string())),
    };
    let cbs = CbsConfig {
        horizon: spec.horizon,
        node_budget: spec.node_budget,
        hold_goal: spec.hold_goal,
    };
    let outcome = match plan_with_fallback(&map, &instance, &cbs, derive(spec.seed, "corpus-order", env.index)) {
        Ok(o) => o,
        Err(e) => return Ok(EnvOutcome::Skipped(e.to_string())),
    };
    let trajs = rollout_expert(map, &instance, &outcome.plan, config, env.index)?;
    let mut chunks = Vec::new();
    for t in &trajs {
        chunks.extend(chunk(t, spec.context_len, spec.stride));
    }
    Ok(EnvOutcome::Built {
        planner: outcome.planner,
        trajectories: trajs.len(),
        degenerate: trajs.iter().filter(|t| t.is_degenerate()).count(),
        transitions: trajs.iter().map(|t| t.transitions.len()).sum(),
        chunks,
    })
}

/// Plans, replays and chunks every environment of `spec`. Environments that
/// cannot be sampled or planned are skipped and recorded in the metadata.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<(DatasetMeta, Vec<TrajectoryChunk>), DatasetError> {
    spec.validate()?;
    let config = spec.episode_config();
    let envs = spec.enumerate();
    let outcomes: Vec<Result<EnvOutcome, DatasetError>> =
        envs.par_iter().map(|e| build_env(spec, e, &config)).collect();

    let mut combos: Vec<ComboStats> = Vec::with_capacity(spec.combinations());
    let mut skips = Vec::new();
    let mut chunks = Vec::new();
    let mut episodes = 0;
    for (env, outcome) in envs.iter().zip(outcomes) {
        if env.combination == combos.len() {
            combos.push(ComboStats {
                map_size: env.map_size,
                n_agents: env.n_agents,
                density: env.density,
                ..ComboStats::default()
            });
        }
        let stats = &mut combos[env.combination];
        stats.instances += 1;
        match outcome? {
            EnvOutcome::Built {
                planner,
                trajectories,
                degenerate,
                transitions,
                chunks: cs,
            } => {
                match planner {
                    Planner::Cbs => stats.solved_cbs += 1,
                    Planner::Prioritized => stats.solved_prioritized += 1,
                }
                stats.trajectories += trajectories;
                stats.degenerate += degenerate;
                stats.transitions += transitions;
                stats.chunks += cs.len();
                chunks.extend(cs);
                episodes += 1;
            }
            EnvOutcome::Skipped(reason) => {
                log::warn!("corpus environment {} skipped: {reason}", env.index);
                stats.skipped += 1;
                skips.push(SkipRecord {
                    index: env.index,
                    reason,
                });
            }
        }
    }
    let meta = DatasetMeta {
        spec: spec.clone(),
        combos,
        skips,
        episodes,
        chunks: chunks.len(),
    };
    Ok((meta, chunks))
}

/// [`generate_corpus`] followed by [`write_dataset`].
pub fn build_corpus(spec: &CorpusSpec, out: &Path) -> Result<DatasetMeta, DatasetError> {
    let (meta, chunks) = generate_corpus(spec)?;
    write_dataset(out, &meta, &chunks)?;
    Ok(meta)
}
