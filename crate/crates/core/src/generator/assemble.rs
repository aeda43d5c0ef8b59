use anim3d_numerics::Tensor;

use crate::error::{CoreError, Result};
use crate::head::{FaceParams, JOINT_GLOBAL, JOINT_JAW};

/// Builds per-frame parameters from generated sequences: identity, neck and
/// eye pose, albedo and lighting come from `reference`; expression and jaw
/// from the generator; camera per frame from `cameras`. The global head
/// rotation is taken from `head_rotation` when given, otherwise zero.
pub fn assemble_animation(
    reference: &FaceParams,
    psi: &Tensor,
    jaw: &Tensor,
    cameras: &[[f64; 3]],
    head_rotation: Option<&[[f64; 3]]>,
) -> Result<Vec<FaceParams>> {
    if psi.ndim() != 2 || jaw.ndim() != 2 || jaw.shape()[1] != 3 {
        return Err(CoreError::arg(format!(
            "psi {:?} and jaw {:?} must be [T, d_psi] and [T, 3]",
            psi.shape(),
            jaw.shape()
        )));
    }
    let t = psi.shape()[0];
    if psi.shape()[1] != reference.psi.len() {
        return Err(CoreError::arg(format!(
            "generated psi has {} dims, reference has {}",
            psi.shape()[1],
            reference.psi.len()
        )));
    }
    let lengths = [jaw.shape()[0], cameras.len(), head_rotation.map_or(t, <[_]>::len)];
    if lengths.iter().any(|&l| l != t) {
        return Err(CoreError::arg(format!("sequence lengths differ: psi {t}, jaw/cameras/rotation {lengths:?}")));
    }
    Ok((0..t)
        .map(|i| {
            let mut f = reference.clone();
            f.psi = psi.row(i).to_vec();
            let j = jaw.row(i);
            f.set_joint_pose(JOINT_JAW, [j[0], j[1], j[2]]);
            f.set_joint_pose(JOINT_GLOBAL, head_rotation.map_or([0.0; 3], |r| r[i]));
            f.camera = cameras[i];
            f
        })
        .collect())
}
