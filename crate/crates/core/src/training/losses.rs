use anim3d_numerics::{Graph, NodeId, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::head::{lip_landmarks_3d, project_2d, FaceParams, HeadAsset};

fn row_norm(a: &[f64], b: &[f64], squared: bool) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    if squared {
        s
    } else {
        s.sqrt()
    }
}

/// Sum over frames of the Euclidean expression error plus the Euclidean jaw
/// error. Inputs are `[T, d_psi]` and `[T, 3]`.
pub fn loss_reg(psi_pred: &Tensor, psi_gt: &Tensor, jaw_pred: &Tensor, jaw_gt: &Tensor) -> Result<f64> {
    loss_reg_with(psi_pred, psi_gt, jaw_pred, jaw_gt, false)
}

/// [`loss_reg`] with optionally squared per-frame norms.
pub fn loss_reg_with(
    psi_pred: &Tensor,
    psi_gt: &Tensor,
    jaw_pred: &Tensor,
    jaw_gt: &Tensor,
    squared: bool,
) -> Result<f64> {
    if psi_pred.shape() != psi_gt.shape() || jaw_pred.shape() != jaw_gt.shape() || psi_pred.ndim() != 2 {
        return Err(CoreError::arg(format!(
            "loss_reg shapes: psi {:?} vs {:?}, jaw {:?} vs {:?}",
            psi_pred.shape(),
            psi_gt.shape(),
            jaw_pred.shape(),
            jaw_gt.shape()
        )));
    }
    if jaw_pred.ndim() != 2 || jaw_pred.shape() != [psi_pred.shape()[0], 3] {
        return Err(CoreError::arg(format!("jaw must be [T, 3], got {:?}", jaw_pred.shape())));
    }
    let t = psi_pred.shape()[0];
    Ok((0..t)
        .map(|i| {
            row_norm(psi_pred.row(i), psi_gt.row(i), squared) + row_norm(jaw_pred.row(i), jaw_gt.row(i), squared)
        })
        .sum())
}

/// Graph form of [`loss_reg_with`] for predictions of any leading shape.
pub fn loss_reg_graph(
    g: &mut Graph,
    psi_pred: NodeId,
    psi_gt: NodeId,
    jaw_pred: NodeId,
    jaw_gt: NodeId,
    squared: bool,
) -> Result<NodeId> {
    let term = |g: &mut Graph, pred: NodeId, gt: NodeId| -> Result<NodeId> {
        let diff = g.sub(pred, gt)?;
        if squared {
            Ok(g.sum_squares(diff)?)
        } else {
            let n = g.norm_last(diff)?;
            Ok(g.sum(n)?)
        }
    };
    let a = term(g, psi_pred, psi_gt)?;
    let b = term(g, jaw_pred, jaw_gt)?;
    Ok(g.add(a, b)?)
}

/// Projected lip landmarks of one frame.
pub fn projected_lips(asset: &HeadAsset, params: &FaceParams) -> Result<Vec<[f64; 2]>> {
    let mesh = params.mesh(asset)?;
    project_2d(&lip_landmarks_3d(asset, &mesh), params.camera)
}

/// Sum over frames and landmarks of `|x - x_gt| + |y - y_gt|` between the
/// projected lip landmarks of `params_pred` and `gt_lip_2d`.
pub fn loss_mc(asset: &HeadAsset, params_pred: &[FaceParams], gt_lip_2d: Option<&[Vec<[f64; 2]>]>) -> Result<f64> {
    let gt = gt_lip_2d.ok_or_else(|| CoreError::Config("mouth closure loss needs ground-truth lip landmarks".into()))?;
    if gt.len() != params_pred.len() {
        return Err(CoreError::arg(format!(
            "{} predicted frames but {} landmark frames",
            params_pred.len(),
            gt.len()
        )));
    }
    let mut total = 0.0;
    for (p, g) in params_pred.iter().zip(gt) {
        let pred = projected_lips(asset, p)?;
        if pred.len() != g.len() {
            return Err(CoreError::arg(format!("{} landmarks per frame, ground truth has {}", pred.len(), g.len())));
        }
        total += pred
            .iter()
            .zip(g)
            .map(|(a, b)| (a[0] - b[0]).abs() + (a[1] - b[1]).abs())
            .sum::<f64>();
    }
    Ok(total)
}

/// Weights of the training objective. Only the regression and mouth closure
/// terms exist here; the photometric and emotion weights are accepted so
/// configs can name them, but must stay zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub reg: f64,
    pub mc: f64,
    pub pho: f64,
    pub emo: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            reg: 1.0,
            mc: 0.1,
            pho: 0.0,
            emo: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.pho != 0.0 {
            return Err(CoreError::UnsupportedTerm("photometric"));
        }
        if self.emo != 0.0 {
            return Err(CoreError::UnsupportedTerm("emotion"));
        }
        if !(self.reg >= 0.0 && self.mc >= 0.0) {
            return Err(CoreError::Config(format!(
                "loss weights must be non-negative, got reg {} mc {}",
                self.reg, self.mc
            )));
        }
        Ok(())
    }
}

/// `reg * l_reg + mc * l_mc`.
pub fn total_loss(weights: &LossWeights, l_reg: f64, l_mc: f64) -> Result<f64> {
    weights.validate()?;
    Ok(weights.reg * l_reg + weights.mc * l_mc)
}
