//! Building blocks shared by the commands: named presets, training on an
//! in-memory corpus and policy factories for evaluation.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use dtmapf_core::dataset::{CorpusSpec, TrajectoryChunk};
use dtmapf_core::seed::derive;
use dtmapf_harness::advisor::{LlmAdvisor, LlmConfig};
use dtmapf_harness::eval::{run_eval, EvalOutcome, EvalSpec};
use dtmapf_harness::scenario::AdvisorKind;
use dtmapf_harness::{Advisor, DtPolicy, DtPolicyConfig, OracleAdvisor, Policy};
use dtmapf_model::{evaluate, DTConfig, Model, StepStats, TrainConfig, TrainState, LOG_HEADER};
use serde::{Deserialize, Serialize};

use crate::manifest::load_config;

/// Context length of the toy pipeline. Toy episodes are short, so a shorter
/// window wastes less work on padding than the full 50.
pub const TOY_CONTEXT: usize = 16;

/// Maps in the toy corpus. With 500 the greedy policy still deadlocks in
/// about a quarter of held-out episodes; 2000 brings that under a fifth.
pub const TOY_ENVS: usize = 2000;

/// Empty 10x10 maps with four agents.
pub fn toy_corpus(envs: usize, seed: u64) -> CorpusSpec {
    CorpusSpec {
        agent_counts: vec![4],
        grid_sizes: vec![10],
        densities: vec![0.0],
        envs_per_combination: envs,
        seed,
        context_len: TOY_CONTEXT,
        stride: TOY_CONTEXT,
        ..CorpusSpec::paper()
    }
}

pub fn toy_model() -> DTConfig {
    DTConfig {
        context_len: TOY_CONTEXT,
        ..DTConfig::toy()
    }
}

pub fn toy_training() -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        weight_decay: 0.0,
        warmup_steps: 50,
        batch_size: 32,
        steps: 3000,
        log_every: 100,
        ..TrainConfig::default()
    }
}

/// `desk`, `paper`, `toy` or a JSON file.
pub fn corpus_preset(name: &str) -> Result<CorpusSpec> {
    Ok(match name {
        "desk" => CorpusSpec::desk(),
        "paper" => CorpusSpec::paper(),
        "toy" => toy_corpus(TOY_ENVS, 0),
        path => load_config(Path::new(path))?,
    })
}

/// Model and optimizer settings read from one file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainFile {
    pub model: DTConfig,
    pub train: TrainConfig,
}

/// `default`, `toy`, `tiny` or a JSON file holding a [`TrainFile`].
pub fn model_preset(name: &str) -> Result<TrainFile> {
    Ok(match name {
        "default" => TrainFile::default(),
        "toy" => TrainFile {
            model: toy_model(),
            train: toy_training(),
        },
        "tiny" => TrainFile {
            model: DTConfig::tiny(),
            train: TrainConfig {
                batch_size: 8,
                steps: 50,
                warmup_steps: 0,
                ..TrainConfig::default()
            },
        },
        path => load_config(Path::new(path))?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub final_running_loss: f64,
    pub final_running_accuracy: f64,
    /// Loss and accuracy over the evaluated chunks, without dropout.
    pub loss: f64,
    pub accuracy: f64,
    pub evaluated_chunks: usize,
}

/// Trains `state` up to `until` updates and scores it on (a prefix of) the
/// corpus.
pub fn train_on(
    state: &mut TrainState<f32>,
    chunks: &[TrajectoryChunk],
    until: u64,
    eval_chunks: Option<usize>,
    log: Option<&mut dyn Write>,
) -> Result<(Vec<StepStats>, TrainSummary)> {
    if let Some(first) = chunks.first() {
        if first.context_len() != state.model.config.context_len {
            bail!(
                "corpus context length {} differs from the model's {}",
                first.context_len(),
                state.model.config.context_len
            );
        }
    }
    let mut log = log;
    if let Some(w) = log.as_deref_mut() {
        if state.step == 0 {
            writeln!(w, "{LOG_HEADER}")?;
        }
    }
    let history = state.train_until(chunks, until, log)?;
    let n = eval_chunks.unwrap_or(chunks.len()).min(chunks.len());
    let (loss, accuracy) = evaluate(&state.model, &chunks[..n], 64)?;
    Ok((
        history,
        TrainSummary {
            steps: state.step,
            final_running_loss: state.running_loss,
            final_running_accuracy: state.running_accuracy,
            loss,
            accuracy,
            evaluated_chunks: n,
        },
    ))
}

/// Fresh policies for one episode. Agent `i` of episode `episode` samples
/// with its own generator derived from the configured seed.
pub fn dt_policies(model: &Arc<Model<f32>>, config: &DtPolicyConfig, episode: u64, n: usize) -> Vec<Box<dyn Policy>> {
    (0..n)
        .map(|i| {
            let cfg = DtPolicyConfig {
                seed: derive(derive(config.seed, "policy-episode", episode), "policy-agent", i as u64),
                ..config.clone()
            };
            Box::new(DtPolicy::new(model.clone(), cfg)) as Box<dyn Policy>
        })
        .collect()
}

/// Builds the advisor the spec asks for. The LLM advisor reads its endpoint
/// and key from the environment; `llm_file` may override the other settings.
pub fn make_advisor(
    kind: AdvisorKind,
    llm_file: Option<&Path>,
    llm_log: Option<&Path>,
) -> Result<Option<Box<dyn Advisor>>> {
    Ok(match kind {
        AdvisorKind::None => None,
        AdvisorKind::Oracle => Some(Box::new(OracleAdvisor)),
        AdvisorKind::Llm => {
            let env = LlmConfig::from_env().context("the llm advisor needs LLM_API_URL (and usually LLM_API_KEY)")?;
            let mut cfg = match llm_file {
                Some(p) => load_config::<LlmConfig>(p)?,
                None => LlmConfig::default(),
            };
            cfg.url = env.url;
            cfg.api_key = env.api_key;
            if let Some(p) = llm_log {
                cfg.log_path = Some(p.to_path_buf());
            }
            Some(Box::new(LlmAdvisor::new(cfg)?))
        }
    })
}

/// Evaluates a trained model under `spec`.
pub fn eval_model(
    spec: &EvalSpec,
    model: &Arc<Model<f32>>,
    policy: &DtPolicyConfig,
    advisor: Option<&mut dyn Advisor>,
) -> Result<EvalOutcome> {
    let mut episode = 0;
    let mut factory = |n: usize| {
        episode += 1;
        dt_policies(model, policy, episode - 1, n)
    };
    Ok(run_eval(spec, &mut factory, advisor)?)
}
