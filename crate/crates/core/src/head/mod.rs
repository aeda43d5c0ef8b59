//! Parametric head model: identity and expression blendshapes, a five-joint
//! skeleton driven by linear blend skinning, lip landmarks and weak-perspective
//! projection.

mod asset;
mod obj;
mod params;
mod skinning;
mod toy;

pub use asset::{HeadAsset, HeadAssetParts, LipLandmark};
pub use obj::{export_obj, obj_string, read_obj_vertices};
pub use params::{FaceParams, LIGHTING_DIM, POSE_DIM};
pub use skinning::{evaluate_mesh, lip_landmarks_2d_graph, LandmarkRig, Mesh};
pub use toy::{generate_toy_asset, DEFAULT_LIP_LANDMARKS};

use crate::error::{CoreError, Result};

pub const N_JOINTS: usize = 5;
pub const JOINT_GLOBAL: usize = 0;
pub const JOINT_NECK: usize = 1;
pub const JOINT_JAW: usize = 2;
pub const JOINT_LEFT_EYE: usize = 3;
pub const JOINT_RIGHT_EYE: usize = 4;

/// Parent of each joint in the kinematic chain global -> neck -> {jaw, eyes}.
pub const PARENTS: [Option<usize>; N_JOINTS] = [None, Some(0), Some(1), Some(1), Some(1)];

/// Lip landmark positions on a mesh: barycentric blend of each landmark's face.
pub fn lip_landmarks_3d(asset: &HeadAsset, mesh: &Mesh) -> Vec<[f64; 3]> {
    asset
        .lip_landmarks()
        .iter()
        .map(|lm| {
            let f = asset.faces()[lm.face];
            let mut p = [0.0; 3];
            for (k, &vi) in f.iter().enumerate() {
                let v = mesh.vertex(vi);
                for c in 0..3 {
                    p[c] += lm.bary[k] * v[c];
                }
            }
            p
        })
        .collect()
}

/// Weak-perspective projection `(s (X + tx), s (Y + ty))`.
pub fn project_2d(points: &[[f64; 3]], camera: [f64; 3]) -> Result<Vec<[f64; 2]>> {
    let [s, tx, ty] = camera;
    if !(s > 0.0) || !s.is_finite() {
        return Err(CoreError::arg(format!("camera scale must be positive, got {s}")));
    }
    Ok(points
        .iter()
        .map(|p| [s * (p[0] + tx), s * (p[1] + ty)])
        .collect())
}
