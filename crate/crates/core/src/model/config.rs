use serde::{Deserialize, Serialize};

use crate::retrieval::DEFAULT_D_MAX;

use super::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchMode {
    /// Encoder-style: every position attends to every position.
    Bidirectional,
    /// Decoder-style: position `i` attends to `j <= i` only.
    Causal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Mean over all final hidden rows.
    AllMean,
    /// Mean over the sink rows only.
    SinkMean,
    /// Final row; causal mode only.
    LastToken,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub arch: ArchMode,
    pub sink_embed_dim: usize,
    pub d_max: u32,
    /// Layers that host the sink-to-sink bias, ascending.
    pub bias_layers: Vec<usize>,
    pub dropout: f64,
    pub pooling: Pooling,
}

impl ModelConfig {
    /// Desk-scale defaults: 4 layers, 4 heads, width 64, bias in every layer.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            d_model: 64,
            n_layers: 4,
            n_heads: 4,
            d_ff: 128,
            vocab_size,
            max_positions: 512,
            arch: ArchMode::Bidirectional,
            sink_embed_dim: 32,
            d_max: DEFAULT_D_MAX,
            bias_layers: (0..4).collect(),
            dropout: 0.1,
            pooling: Pooling::AllMean,
        }
    }

    /// Sets the depth and puts the bias in every layer.
    pub fn with_layers(mut self, n_layers: usize) -> Self {
        self.n_layers = n_layers;
        self.bias_layers = (0..n_layers).collect();
        self
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn has_bias(&self, layer: usize) -> bool {
        self.bias_layers.binary_search(&layer).is_ok()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model ({}) must be a positive multiple of n_heads ({})",
                self.d_model, self.n_heads
            ));
        }
        if self.sink_embed_dim == 0 {
            return bad("sink_embed_dim must be positive".into());
        }
        if self.vocab_size == 0 || self.max_positions == 0 || self.d_ff == 0 {
            return bad("vocab_size, max_positions and d_ff must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.bias_layers.windows(2).any(|w| w[0] >= w[1]) {
            return bad("bias_layers must be strictly ascending".into());
        }
        if let Some(&l) = self.bias_layers.iter().find(|&&l| l >= self.n_layers) {
            return bad(format!("bias layer {l} outside [0, {})", self.n_layers));
        }
        if self.pooling == Pooling::LastToken && self.arch != ArchMode::Causal {
            return bad("last_token pooling requires causal mode".into());
        }
        Ok(())
    }
}

/// Backbone-scale training settings, kept for reference next to the toy defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: &'static str,
    pub arch: ArchMode,
    pub peak_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warm_ratio: f64,
    pub sink_embed_dim: usize,
    pub dropout: f64,
}

pub const ENCODER_PRESET: Preset = Preset {
    name: "encoder",
    arch: ArchMode::Bidirectional,
    peak_lr: 1e-4,
    batch_size: 64,
    epochs: 3,
    warm_ratio: 0.05,
    sink_embed_dim: 128,
    dropout: 0.1,
};

pub const DECODER_PRESET: Preset = Preset {
    name: "decoder",
    arch: ArchMode::Causal,
    peak_lr: 1e-5,
    batch_size: 16,
    epochs: 3,
    warm_ratio: 0.05,
    sink_embed_dim: 256,
    dropout: 0.1,
};
