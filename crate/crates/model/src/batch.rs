use dtmapf_core::dataset::TrajectoryChunk;
use dtmapf_core::observation::OBS_CELLS;
use dtmapf_core::Observation;

use crate::error::ModelError;

/// Rows of (rtg, observation, action, timestep) slots. Real slots form a
/// prefix of each row; padded slots hold zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    pub batch: usize,
    pub len: usize,
    /// `batch * len` entries each.
    pub rtg: Vec<f64>,
    pub actions: Vec<u8>,
    pub timesteps: Vec<u32>,
    pub mask: Vec<bool>,
    /// `batch * len * 400` binary cells, channel-major per slot.
    pub obs: Vec<u8>,
}

/// One step of an agent's history for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct HistorySlot {
    pub rtg: f64,
    pub obs: Observation,
    /// `None` for the slot whose action is being predicted.
    pub action: Option<u8>,
    pub timestep: u32,
}

impl TokenBatch {
    pub fn zeros(batch: usize, len: usize) -> Self {
        let n = batch * len;
        Self {
            batch,
            len,
            rtg: vec![0.0; n],
            actions: vec![0; n],
            timesteps: vec![0; n],
            mask: vec![false; n],
            obs: vec![0; n * OBS_CELLS],
        }
    }

    /// Stacks chunks, cut to the longest real prefix among them. With causal
    /// attention and trailing padding the cut does not change any real logit.
    pub fn from_chunks(chunks: &[&TrajectoryChunk]) -> Self {
        let len = chunks.iter().map(|c| c.real_len()).max().unwrap_or(0).max(1);
        let mut b = Self::zeros(chunks.len(), len);
        for (row, c) in chunks.iter().enumerate() {
            for (s, slot) in c.real_slots().iter().enumerate().take(len) {
                let i = row * len + s;
                b.rtg[i] = slot.rtg as f64;
                b.actions[i] = slot.action;
                b.timesteps[i] = slot.timestep as u32;
                b.mask[i] = true;
                b.obs[i * OBS_CELLS..(i + 1) * OBS_CELLS].copy_from_slice(slot.obs.as_slice());
            }
        }
        b
    }

    /// Single row from the last `context_len` slots of `history`.
    pub fn from_history(history: &[HistorySlot], context_len: usize) -> Result<Self, ModelError> {
        if history.is_empty() {
            return Err(ModelError::EmptyHistory);
        }
        let window = &history[history.len().saturating_sub(context_len)..];
        let mut b = Self::zeros(1, window.len());
        for (i, slot) in window.iter().enumerate() {
            b.rtg[i] = slot.rtg;
            b.actions[i] = slot.action.unwrap_or(0);
            b.timesteps[i] = slot.timestep;
            b.mask[i] = true;
            b.obs[i * OBS_CELLS..(i + 1) * OBS_CELLS].copy_from_slice(slot.obs.as_slice());
        }
        Ok(b)
    }

    pub fn real_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn slot_obs(&self, i: usize) -> &[u8] {
        &self.obs[i * OBS_CELLS..(i + 1) * OBS_CELLS]
    }

    pub fn validate(&self, context_len: usize, n_actions: usize) -> Result<(), ModelError> {
        let n = self.batch * self.len;
        if self.len > context_len {
            return Err(ModelError::Shape(format!(
                "sequence length {} exceeds context length {context_len}",
                self.len
            )));
        }
        if [self.rtg.len(), self.actions.len(), self.timesteps.len(), self.mask.len()]
            .iter()
            .any(|&l| l != n)
            || self.obs.len() != n * OBS_CELLS
        {
            return Err(ModelError::Shape("batch field lengths disagree".into()));
        }
        if self.actions.iter().any(|&a| a as usize >= n_actions) {
            return Err(ModelError::Shape("action code out of range".into()));
        }
        if self.obs.iter().any(|&v| v > 1) {
            return Err(ModelError::Shape("observation is not binary".into()));
        }
        Ok(())
    }
}
