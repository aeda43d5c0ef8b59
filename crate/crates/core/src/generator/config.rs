use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Network hyperparameters.
///
/// The audio encoder is a 3x3 stem convolution to `encoder_channels[0]`,
/// then for every further channel count a 3x3 convolution with stride 2 in
/// time and 3 in frequency followed by a residual block (3x3 convolution plus
/// identity skip), all with ReLU, and finally a global average pool. Five
/// channel counts reduce a 16x80 window to 1x1 before pooling, so the default
/// list gives a 512-d feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub d_model: usize,
    pub n_tsa_layers: usize,
    pub n_heads: usize,
    /// Hidden width of the feed-forward sublayers and both output heads.
    pub mlp_hidden: usize,
    /// Frames per generated segment.
    pub t_len: usize,
    pub n_styles: usize,
    pub d_psi: usize,
    /// Width of the style embedding.
    pub d_style: usize,
    pub encoder_channels: Vec<usize>,
    /// When false the modulation block is skipped (scale 1, shift 0).
    pub use_style: bool,
    pub layer_norm_eps: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            d_model: 512,
            n_tsa_layers: 4,
            n_heads: 4,
            mlp_hidden: 1024,
            t_len: 12,
            n_styles: 8,
            d_psi: 50,
            d_style: 64,
            encoder_channels: vec![32, 64, 128, 256, 512],
            use_style: true,
            layer_norm_eps: 1e-5,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    /// Small network for overfit runs and tests on one CPU core.
    pub fn tiny() -> Self {
        GeneratorConfig {
            d_model: 64,
            n_tsa_layers: 2,
            n_heads: 4,
            mlp_hidden: 128,
            d_style: 16,
            encoder_channels: vec![4, 8, 16, 32, 64],
            ..GeneratorConfig::default()
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn audio_dim(&self) -> usize {
        *self.encoder_channels.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.d_model > 0, "d_model must be positive"),
            (self.n_heads > 0, "n_heads must be positive"),
            (self.d_model % self.n_heads.max(1) == 0, "d_model must be divisible by n_heads"),
            (self.mlp_hidden > 0, "mlp_hidden must be positive"),
            (self.t_len >= 1, "t_len must be at least 1"),
            (self.n_styles >= 1, "n_styles must be at least 1"),
            (self.d_psi >= 1, "d_psi must be at least 1"),
            (self.d_style >= 1, "d_style must be at least 1"),
            (!self.encoder_channels.is_empty(), "encoder_channels must not be empty"),
            (self.encoder_channels.iter().all(|c| *c > 0), "encoder channels must be positive"),
            (self.layer_norm_eps > 0.0, "layer_norm_eps must be positive"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(CoreError::Config((*msg).to_string())),
            None => Ok(()),
        }
    }
}
