//! Per-agent decentralized policies.

use std::collections::VecDeque;
use std::sync::Arc;

use dtmapf_core::{Action, Observation};
use dtmapf_model::{HistorySlot, Model};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct PolicyError(pub String);

/// One agent's controller. A policy only ever sees its own agent's
/// observation and its own internal state.
pub trait Policy: Send {
    fn act(&mut self, obs: &Observation, t: u32) -> Result<Action, PolicyError>;

    /// Called instead of [`Policy::act`] on steps where another controller
    /// chose the agent's action, so the policy's history stays complete.
    fn observe_external(&mut self, _obs: &Observation, _action: Action, _t: u32) {}

    /// Reward received for the step just taken, whichever controller chose it.
    fn record_reward(&mut self, _reward: f64) {}

    /// The agent's goal has been replaced.
    fn on_goal_change(&mut self) {}
}

/// Always waits.
#[derive(Debug, Default, Clone)]
pub struct WaitPolicy;

impl Policy for WaitPolicy {
    fn act(&mut self, _obs: &Observation, _t: u32) -> Result<Action, PolicyError> {
        Ok(Action::Wait)
    }
}

/// Replays a fixed action list indexed by the clock, waiting past its end.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    pub actions: Vec<Action>,
}

impl ScriptedPolicy {
    pub fn new(actions: Vec<Action>) -> Self {
        Self { actions }
    }

    /// Actions that walk `path`, one cell per timestep.
    pub fn from_path(path: &[dtmapf_core::Coord]) -> Self {
        let actions = path
            .windows(2)
            .map(|w| w[0].action_to(w[1]).unwrap_or(Action::Wait))
            .collect();
        Self { actions }
    }
}

impl Policy for ScriptedPolicy {
    fn act(&mut self, _obs: &Observation, t: u32) -> Result<Action, PolicyError> {
        Ok(self.actions.get(t as usize).copied().unwrap_or(Action::Wait))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DtPolicyConfig {
    /// Return-to-go the policy is conditioned on at the start and after every
    /// goal change.
    pub target_rtg: f64,
    /// Forget the context window when the goal changes.
    pub clear_context_on_change: bool,
    /// Softmax temperature for action sampling; 0 picks the argmax.
    pub temperature: f64,
    /// Seed of the sampling generator.
    pub seed: u64,
}

impl Default for DtPolicyConfig {
    fn default() -> Self {
        Self {
            target_rtg: 20.0,
            clear_context_on_change: false,
            temperature: 0.0,
            seed: 0,
        }
    }
}

/// Decision Transformer controller for one agent. Keeps the last `K`
/// (rtg, observation, action) slots and the current return-to-go.
pub struct DtPolicy {
    model: Arc<Model<f32>>,
    pub config: DtPolicyConfig,
    buffer: VecDeque<HistorySlot>,
    rtg: f64,
    rng: ChaCha8Rng,
}

impl DtPolicy {
    pub fn new(model: Arc<Model<f32>>, config: DtPolicyConfig) -> Self {
        let rtg = config.target_rtg;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self {
            model,
            config,
            buffer: VecDeque::new(),
            rtg,
            rng,
        }
    }

    pub fn rtg(&self) -> f64 {
        self.rtg
    }

    pub fn history(&self) -> Vec<HistorySlot> {
        self.buffer.iter().cloned().collect()
    }

    fn choose(&mut self) -> Result<u8, PolicyError> {
        let history = self.buffer.make_contiguous();
        if self.config.temperature <= 0.0 {
            return self.model.predict_action(history, None).map_err(|e| PolicyError(e.to_string()));
        }
        let logits = self
            .model
            .next_action_logits(history)
            .map_err(|e| PolicyError(e.to_string()))?;
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits
            .iter()
            .map(|l| ((l - m) / self.config.temperature).exp())
            .collect();
        let mut u = self.rng.random::<f64>() * w.iter().sum::<f64>();
        for (i, wi) in w.iter().enumerate() {
            if u < *wi {
                return Ok(i as u8);
            }
            u -= wi;
        }
        Ok((w.len() - 1) as u8)
    }

    fn push(&mut self, slot: HistorySlot) {
        self.buffer.push_back(slot);
        while self.buffer.len() > self.model.config.context_len {
            self.buffer.pop_front();
        }
    }
}

impl Policy for DtPolicy {
    fn act(&mut self, obs: &Observation, t: u32) -> Result<Action, PolicyError> {
        self.push(HistorySlot {
            rtg: self.rtg,
            obs: obs.clone(),
            action: None,
            timestep: t,
        });
        let code = self.choose()?;
        let action = Action::from_code(code)
            .ok_or_else(|| PolicyError(format!("model produced action code {code}")))?;
        if let Some(last) = self.buffer.back_mut() {
            last.action = Some(action.code());
        }
        Ok(action)
    }

    fn observe_external(&mut self, obs: &Observation, action: Action, t: u32) {
        self.push(HistorySlot {
            rtg: self.rtg,
            obs: obs.clone(),
            action: Some(action.code()),
            timestep: t,
        });
    }

    fn record_reward(&mut self, reward: f64) {
        self.rtg -= reward;
    }

    fn on_goal_change(&mut self) {
        self.rtg = self.config.target_rtg;
        if self.config.clear_context_on_change {
            self.buffer.clear();
        }
    }
}
