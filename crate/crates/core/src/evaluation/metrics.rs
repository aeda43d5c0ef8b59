use std::fmt::Write as _;

use anim3d_numerics::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::head::{FaceParams, HeadAsset};

/// How a frame's vertex error is reduced to one number.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameNorm {
    /// Euclidean norm over all stacked coordinates of the frame.
    #[default]
    Stacked,
    /// Mean over vertices of the per-vertex Euclidean distance.
    PerVertexMean,
}

fn check_pair(pred: &Tensor, gt: &Tensor) -> Result<(usize, usize)> {
    let s = pred.shape();
    if s.len() != 3 || s[2] != 3 {
        return Err(CoreError::arg(format!("vertex sequences must be [T, n, 3], got {s:?}")));
    }
    if s != gt.shape() {
        return Err(CoreError::arg(format!(
            "prediction {s:?} and ground truth {:?} differ in shape",
            gt.shape()
        )));
    }
    Ok((s[0], s[1]))
}

fn reduce(diff: &[f64], norm: FrameNorm) -> f64 {
    match norm {
        FrameNorm::Stacked => diff.iter().map(|d| d * d).sum::<f64>().sqrt(),
        FrameNorm::PerVertexMean => {
            let n = diff.len() / 3;
            if n == 0 {
                return 0.0;
            }
            diff.chunks(3)
                .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
                .sum::<f64>()
                / n as f64
        }
    }
}

/// Per-frame displacement error between two `[T, n, 3]` sequences.
pub fn frame_errors(pred: &Tensor, gt: &Tensor, norm: FrameNorm) -> Result<Vec<f64>> {
    let (t, n) = check_pair(pred, gt)?;
    let w = 3 * n;
    Ok((0..t)
        .map(|f| {
            let diff: Vec<f64> = pred.data()[f * w..(f + 1) * w]
                .iter()
                .zip(&gt.data()[f * w..(f + 1) * w])
                .map(|(a, b)| a - b)
                .collect();
            reduce(&diff, norm)
        })
        .collect())
}

/// Mean over frames of the per-frame displacement error.
pub fn displacement_error(pred: &Tensor, gt: &Tensor, norm: FrameNorm) -> Result<f64> {
    let errs = frame_errors(pred, gt, norm)?;
    if errs.is_empty() {
        return Err(CoreError::arg("vertex sequences have no frames"));
    }
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// `1/(T-1)` times the norm of the difference between the two sequences'
/// frame-to-frame velocities. With [`FrameNorm::Stacked`] the norm is taken
/// over the whole stacked velocity difference; with
/// [`FrameNorm::PerVertexMean`] it is summed per frame pair.
pub fn velocity_error(pred: &Tensor, gt: &Tensor, norm: FrameNorm) -> Result<f64> {
    let (t, n) = check_pair(pred, gt)?;
    if t < 2 {
        return Err(CoreError::arg(format!("velocity error needs at least 2 frames, got {t}")));
    }
    let w = 3 * n;
    let (p, g) = (pred.data(), gt.data());
    let diff = |f: usize| -> Vec<f64> {
        (0..w)
            .map(|i| (p[(f + 1) * w + i] - p[f * w + i]) - (g[(f + 1) * w + i] - g[f * w + i]))
            .collect()
    };
    let total = match norm {
        FrameNorm::Stacked => (0..t - 1)
            .map(|f| diff(f).iter().map(|d| d * d).sum::<f64>())
            .sum::<f64>()
            .sqrt(),
        FrameNorm::PerVertexMean => (0..t - 1).map(|f| reduce(&diff(f), norm)).sum(),
    };
    Ok(total / (t - 1) as f64)
}

/// Restricts a `[T, n, 3]` sequence to the listed vertices.
pub fn select_vertices(seq: &Tensor, vertices: &[usize]) -> Result<Tensor> {
    let s = seq.shape();
    if s.len() != 3 || s[2] != 3 {
        return Err(CoreError::arg(format!("vertex sequences must be [T, n, 3], got {s:?}")));
    }
    if let Some(v) = vertices.iter().find(|&&v| v >= s[1]) {
        return Err(CoreError::arg(format!("vertex {v} out of range for {} vertices", s[1])));
    }
    let mut out = Vec::with_capacity(s[0] * vertices.len() * 3);
    for f in 0..s[0] {
        for &v in vertices {
            let base = (f * s[1] + v) * 3;
            out.extend_from_slice(&seq.data()[base..base + 3]);
        }
    }
    Ok(Tensor::new(vec![s[0], vertices.len(), 3], out)?)
}

/// Evaluates every frame's mesh into a `[T, n_v, 3]` sequence.
pub fn mesh_sequence(asset: &HeadAsset, frames: &[FaceParams]) -> Result<Tensor> {
    let n_v = asset.n_vertices();
    let mut data = Vec::with_capacity(frames.len() * n_v * 3);
    for f in frames {
        data.extend_from_slice(f.mesh(asset)?.vertices.data());
    }
    Ok(Tensor::new(vec![frames.len(), n_v, 3], data)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerFrame {
    pub lde: Vec<f64>,
    pub ede: Vec<f64>,
}

/// The four vertex metrics for one clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub lde: f64,
    pub lve: f64,
    pub ede: f64,
    pub eve: f64,
    pub per_frame: PerFrame,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_id: Option<String>,
    pub n_frames: usize,
    pub frame_norm: FrameNorm,
}

impl MetricReport {
    /// Computes all metrics from full-mesh sequences; the lip metrics use
    /// `lip_vertices`.
    pub fn from_vertices(pred: &Tensor, gt: &Tensor, lip_vertices: &[usize], norm: FrameNorm) -> Result<Self> {
        let (t, _) = check_pair(pred, gt)?;
        if t < 2 {
            return Err(CoreError::arg(format!("metrics need at least 2 frames, got {t}")));
        }
        let lip_pred = select_vertices(pred, lip_vertices)?;
        let lip_gt = select_vertices(gt, lip_vertices)?;
        let lde = frame_errors(&lip_pred, &lip_gt, norm)?;
        let ede = frame_errors(pred, gt, norm)?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        Ok(MetricReport {
            lde: mean(&lde),
            lve: velocity_error(&lip_pred, &lip_gt, norm)?,
            ede: mean(&ede),
            eve: velocity_error(pred, gt, norm)?,
            per_frame: PerFrame { lde, ede },
            clip_id: None,
            n_frames: t,
            frame_norm: norm,
        })
    }

    /// Evaluates both parameter sequences on `asset` and compares the meshes.
    pub fn from_params(asset: &HeadAsset, pred: &[FaceParams], gt: &[FaceParams], norm: FrameNorm) -> Result<Self> {
        if pred.len() != gt.len() {
            return Err(CoreError::arg(format!(
                "prediction has {} frames, ground truth {}",
                pred.len(),
                gt.len()
            )));
        }
        let p = mesh_sequence(asset, pred)?;
        let g = mesh_sequence(asset, gt)?;
        MetricReport::from_vertices(&p, &g, asset.lip_vertices(), norm)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<8}{:>14}", "metric", "value");
        for (name, v) in [("LDE", self.lde), ("LVE", self.lve), ("EDE", self.ede), ("EVE", self.eve)] {
            let _ = writeln!(s, "{name:<8}{v:>14.6e}");
        }
        let _ = writeln!(s, "{:<8}{:>14}", "frames", self.n_frames);
        s
    }
}
