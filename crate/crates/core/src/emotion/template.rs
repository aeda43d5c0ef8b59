use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anim3d_numerics::Tensor;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::container::Container;
use crate::error::{CoreError, Result};

const KIND: &str = "emotion_template";

/// Expression dimensions left untouched by emotion editing (0-indexed), the
/// first and fourth codes, which drive the mouth.
pub const MASKED_DIMS: [usize; 2] = [0, 3];
pub const INTENSITY_SUBTLE: f64 = 0.4;
pub const INTENSITY_STRONG: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Angry,
    Contempt,
    Happy,
    Sad,
    Surprise,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; 5] = [
        EmotionLabel::Angry,
        EmotionLabel::Contempt,
        EmotionLabel::Happy,
        EmotionLabel::Sad,
        EmotionLabel::Surprise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EmotionLabel::Angry => "angry",
            EmotionLabel::Contempt => "contempt",
            EmotionLabel::Happy => "happy",
            EmotionLabel::Sad => "sad",
            EmotionLabel::Surprise => "surprise",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EmotionLabel {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        EmotionLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| CoreError::arg(format!("unknown emotion `{s}`")))
    }
}

/// Mean expression code over the frames recognized as one emotion.
#[derive(Clone, Debug, PartialEq)]
pub struct EmotionTemplate {
    pub label: EmotionLabel,
    pub psi_temp: Vec<f64>,
    pub n_valid_frames: usize,
}

/// A clip's expression codes `[T, d_psi]` with one predicted label per frame.
/// Labels outside [`EmotionLabel`] (e.g. "neutral") are allowed and never
/// match a target.
#[derive(Clone, Debug)]
pub struct LabeledClip {
    pub psi: Tensor,
    pub labels: Vec<String>,
}

/// Averages the codes of every frame whose label equals `target`.
pub fn extract_template(clips: &[LabeledClip], target: EmotionLabel) -> Result<EmotionTemplate> {
    let mut sum: Option<Vec<f64>> = None;
    let mut count = 0usize;
    for (i, clip) in clips.iter().enumerate() {
        let s = clip.psi.shape();
        if s.len() != 2 || s[0] != clip.labels.len() {
            return Err(CoreError::arg(format!(
                "clip {i}: codes {s:?} do not match {} labels",
                clip.labels.len()
            )));
        }
        let acc = sum.get_or_insert_with(|| vec![0.0; s[1]]);
        if acc.len() != s[1] {
            return Err(CoreError::arg(format!("clip {i} has {} expression dims, expected {}", s[1], acc.len())));
        }
        for (t, label) in clip.labels.iter().enumerate() {
            if label == target.as_str() {
                for (a, v) in acc.iter_mut().zip(clip.psi.row(t)) {
                    *a += v;
                }
                count += 1;
            }
        }
    }
    match sum {
        Some(acc) if count > 0 => Ok(EmotionTemplate {
            label: target,
            psi_temp: acc.into_iter().map(|v| v / count as f64).collect(),
            n_valid_frames: count,
        }),
        _ => Err(CoreError::EmptyTemplate(target.to_string())),
    }
}

impl EmotionTemplate {
    pub fn validate(&self) -> Result<()> {
        if self.n_valid_frames == 0 {
            return Err(CoreError::invalid("n_valid_frames", "must be at least 1"));
        }
        if let Some(i) = self.psi_temp.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::invalid("psi_temp", format!("entry {i} is not finite")));
        }
        Ok(())
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::with_kind(KIND);
        c.set_meta("label", Value::from(self.label.as_str()));
        c.set_meta("n_valid_frames", Value::from(self.n_valid_frames));
        c.insert(
            "psi_temp",
            Tensor::new(vec![self.psi_temp.len()], self.psi_temp.clone()).expect("vector shape"),
        );
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(KIND)?;
        let label = c
            .meta_value("label")
            .and_then(Value::as_str)
            .ok_or_else(|| CoreError::schema("label", "missing or not a string"))?
            .parse()?;
        let t = EmotionTemplate {
            label,
            psi_temp: c.get_shaped("psi_temp", &[None])?.data().to_vec(),
            n_valid_frames: c.meta_usize("n_valid_frames")?,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        EmotionTemplate::from_container(&Container::read(path)?)
    }
}

/// Per-dimension weights: zero on [`MASKED_DIMS`], `intensity` elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector {
    w: Vec<f64>,
}

impl WeightVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }
}

pub fn make_weight(intensity: f64, d_psi: usize) -> Result<WeightVector> {
    if !(0.0..=1.0).contains(&intensity) {
        return Err(CoreError::arg(format!("intensity must lie in [0, 1], got {intensity}")));
    }
    let w = (0..d_psi)
        .map(|k| if MASKED_DIMS.contains(&k) { 0.0 } else { intensity })
        .collect();
    Ok(WeightVector { w })
}

/// `psi + w * template`, leaving the masked dimensions bit-identical.
pub fn apply_emotion(psi: &[f64], template: &EmotionTemplate, w: &WeightVector) -> Result<Vec<f64>> {
    let d = psi.len();
    if template.psi_temp.len() != d || w.w.len() != d {
        return Err(CoreError::arg(format!(
            "dimension mismatch: codes {d}, template {}, weights {}",
            template.psi_temp.len(),
            w.w.len()
        )));
    }
    Ok((0..d)
        .map(|k| {
            if MASKED_DIMS.contains(&k) {
                psi[k]
            } else {
                psi[k] + w.w[k] * template.psi_temp[k]
            }
        })
        .collect())
}

/// Reads a JSON array of per-frame label strings.
pub fn read_label_sidecar(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CoreError::schema("labels", format!("{}: {e}", path.display())))
}
