//! Audio-to-parameter network: convolutional audio encoder, style embedding,
//! sinusoidal positions, temporal self-attention, style modulation and two
//! output heads (expression codes and jaw rotation).

mod assemble;
mod config;
mod network;
mod weights;

pub use assemble::assemble_animation;
pub use config::GeneratorConfig;
pub use network::{
    apply_modulation, encoder_graph, forward_graph, modulate_with, modulation_graph, normalize_mel, positional_table,
    tsa_graph, ForwardNodes, StyleCode, TsaNodes, DOWN_STRIDE,
};
pub use weights::{Bound, Checkpoint, GeneratorWeights};
