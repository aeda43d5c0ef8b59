//! Emotion templates from labeled frames and mouth-preserving emotion editing.

mod pca;
mod template;

pub use pca::{project_codes_2d, Projection};
pub use template::{
    apply_emotion, extract_template, make_weight, read_label_sidecar, EmotionLabel, EmotionTemplate, LabeledClip,
    WeightVector, INTENSITY_STRONG, INTENSITY_SUBTLE, MASKED_DIMS,
};
