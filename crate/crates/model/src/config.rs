use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Architecture of the Decision Transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DTConfig {
    pub context_len: usize,
    pub embed_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_actions: usize,
    /// Size of the timestep embedding table; larger timesteps share the last row.
    pub max_timestep: usize,
    pub dropout: f64,
    /// Output channels of the two 3x3 convolutions.
    pub conv_channels: [usize; 2],
    /// Returns-to-go are divided by this before the linear embedding.
    pub rtg_scale: f64,
    pub param_seed: u64,
}

impl Default for DTConfig {
    fn default() -> Self {
        Self {
            context_len: 50,
            embed_dim: 128,
            n_layers: 3,
            n_heads: 4,
            n_actions: 5,
            max_timestep: 512,
            dropout: 0.1,
            conv_channels: [64, 128],
            rtg_scale: 20.0,
            param_seed: 0,
        }
    }
}

impl DTConfig {
    /// Small network that trains in minutes on one core.
    pub fn toy() -> Self {
        Self {
            embed_dim: 64,
            n_layers: 2,
            n_heads: 4,
            max_timestep: 128,
            dropout: 0.0,
            conv_channels: [16, 32],
            ..Self::default()
        }
    }

    /// Tiny network for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            context_len: 4,
            embed_dim: 8,
            n_layers: 2,
            n_heads: 2,
            max_timestep: 16,
            dropout: 0.0,
            conv_channels: [2, 3],
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.embed_dim == 0 || self.n_heads == 0 || self.embed_dim % self.n_heads != 0 {
            return bad(format!(
                "embed dim {} not divisible by {} heads",
                self.embed_dim, self.n_heads
            ));
        }
        if self.context_len == 0 || self.max_timestep == 0 || self.n_actions < 2 {
            return bad("context length, max timestep and action count must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.conv_channels.contains(&0) || self.rtg_scale <= 0.0 {
            return bad("conv channels and rtg scale must be positive".into());
        }
        Ok(())
    }
}
