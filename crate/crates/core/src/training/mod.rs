//! Losses, the two-stage training loop, clip datasets and the synthetic data
//! generator.

mod dataset;
mod losses;
mod synthetic;
mod train;

pub use dataset::{
    clip_dirs, load_dataset, save_dataset, ClipRecord, Manifest, AUDIO_FILE, LIPS_FILE, MANIFEST_FILE, PARAMS_FILE,
};
pub use losses::{
    loss_mc, loss_reg, loss_reg_graph, loss_reg_with, projected_lips, total_loss, LossWeights,
};
pub use synthetic::{make_synthetic_dataset, SYNTH_ALBEDO_DIM, SYNTH_FPS, SYNTH_IDENTITIES, SYNTH_STYLES};
pub use train::{
    batch_loss, collect_gradients, evaluate_reg, make_batch, prepare_clip, train, train_from, Batch, BatchLoss,
    PreparedClip, StepRecord, TrainConfig, TrainOutcome,
};
