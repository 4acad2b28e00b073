use serde::{Deserialize, Serialize};

use super::types::FEATURE_DIM;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Frames per clip.
    pub seq_len: usize,
    pub feature_dim: usize,
    pub model_dim: usize,
    pub mlp_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub dropout: f64,
    /// Probability of replacing each condition with its unconditional value.
    pub cfg_dropout: f64,
    pub audio_dim: usize,
    /// Identity tokens per subject.
    pub adapter_tokens: usize,
    pub diffusion_steps: usize,
}

impl Default for ModelConfig {
    /// Full-size settings: 8 s at 25 fps, 512-wide, 8 heads, 8 layers.
    fn default() -> Self {
        Self {
            seq_len: 200,
            feature_dim: FEATURE_DIM,
            model_dim: 512,
            mlp_dim: 1024,
            num_heads: 8,
            num_layers: 8,
            dropout: 0.1,
            cfg_dropout: 0.25,
            audio_dim: 768,
            adapter_tokens: 8,
            diffusion_steps: 1000,
        }
    }
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self {
            seq_len: 50,
            model_dim: 64,
            mlp_dim: 128,
            num_heads: 4,
            num_layers: 2,
            dropout: 0.0,
            audio_dim: 16,
            ..Self::default()
        }
    }

    /// Smallest useful configuration, for numerical checks.
    pub fn tiny() -> Self {
        Self {
            seq_len: 2,
            model_dim: 4,
            mlp_dim: 6,
            num_heads: 1,
            num_layers: 1,
            dropout: 0.0,
            audio_dim: 3,
            adapter_tokens: 2,
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("seq_len", self.seq_len),
            ("feature_dim", self.feature_dim),
            ("model_dim", self.model_dim),
            ("mlp_dim", self.mlp_dim),
            ("num_heads", self.num_heads),
            ("num_layers", self.num_layers),
            ("audio_dim", self.audio_dim),
            ("diffusion_steps", self.diffusion_steps),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !self.model_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "model_dim {} not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        for (name, p) in [("dropout", self.dropout), ("cfg_dropout", self.cfg_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {p}")));
            }
        }
        Ok(())
    }
}
