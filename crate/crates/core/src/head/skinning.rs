//! Blendshapes plus linear blend skinning.
//!
//! Skinning is written in displacement form,
//!
//! ```text
//! v' = v + sum_j w_j [ (W_j - I)(v - J_j) + D_j ]
//! D_root = 0,  D_j = D_parent + (W_parent - I)(J_j - J_parent)
//! ```
//!
//! where `W_j` is the world rotation of joint `j` and `J_j` its rest position.
//! This equals the usual `sum_j w_j (W_j (v - J_j) + P_j)` with posed joint
//! positions `P_j = J_j + D_j`, but every term is exactly zero at the rest
//! pose, so zero parameters reproduce the template bit for bit.

use std::sync::Arc;

use anim3d_numerics::{axis_angle_to_matrix, Graph, NodeId, Tensor};

use super::{FaceParams, HeadAsset, JOINT_JAW, N_JOINTS, PARENTS, POSE_DIM};
use crate::error::{CoreError, Result};

/// Posed vertices sharing the asset's face list.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    /// `[n_v, 3]`
    pub vertices: Tensor,
    pub faces: Arc<[[usize; 3]]>,
}

impl Mesh {
    pub fn vertex(&self, v: usize) -> [f64; 3] {
        let r = self.vertices.row(v);
        [r[0], r[1], r[2]]
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.shape()[0]
    }
}

type Mat3 = [f64; 9];

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[i * 3 + j] = a[i * 3] * b[j] + a[i * 3 + 1] * b[3 + j] + a[i * 3 + 2] * b[6 + j];
        }
    }
    out
}

fn mat_vec(a: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        a[0] * v[0] + a[1] * v[1] + a[2] * v[2],
        a[3] * v[0] + a[4] * v[1] + a[5] * v[2],
        a[6] * v[0] + a[7] * v[1] + a[8] * v[2],
    ]
}

fn minus_identity(mut a: Mat3) -> Mat3 {
    a[0] -= 1.0;
    a[4] -= 1.0;
    a[8] -= 1.0;
    a
}

fn check_dims(asset: &HeadAsset, beta: &[f64], theta: &[f64], psi: &[f64]) -> Result<()> {
    if beta.len() != asset.d_beta() {
        return Err(CoreError::arg(format!("beta has {} entries, asset expects {}", beta.len(), asset.d_beta())));
    }
    if psi.len() != asset.d_psi() {
        return Err(CoreError::arg(format!("psi has {} entries, asset expects {}", psi.len(), asset.d_psi())));
    }
    if theta.len() != POSE_DIM {
        return Err(CoreError::arg(format!("theta has {} entries, expected {POSE_DIM}", theta.len())));
    }
    Ok(())
}

/// Template plus identity and expression blendshapes, flattened `[n_v * 3]`.
fn shaped_vertices(asset: &HeadAsset, beta: &[f64], psi: &[f64]) -> Vec<f64> {
    let (db, dp) = (beta.len(), psi.len());
    let sb = asset.shape_basis().data();
    let eb = asset.expression_basis().data();
    asset
        .template()
        .data()
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let s: f64 = sb[i * db..(i + 1) * db].iter().zip(beta).map(|(a, b)| a * b).sum();
            let e: f64 = eb[i * dp..(i + 1) * dp].iter().zip(psi).map(|(a, b)| a * b).sum();
            t + s + e
        })
        .collect()
}

fn regress_joints(asset: &HeadAsset, shaped: &[f64]) -> [[f64; 3]; N_JOINTS] {
    let mut joints = [[0.0; 3]; N_JOINTS];
    for (j, joint) in joints.iter_mut().enumerate() {
        for (v, &w) in asset.joint_regressor().row(j).iter().enumerate() {
            if w != 0.0 {
                for c in 0..3 {
                    joint[c] += w * shaped[3 * v + c];
                }
            }
        }
    }
    joints
}

/// `(W_j - I, D_j)` for every joint.
fn chain(theta: &[f64], joints: &[[f64; 3]; N_JOINTS]) -> ([Mat3; N_JOINTS], [[f64; 3]; N_JOINTS]) {
    let mut world = [[0.0; 9]; N_JOINTS];
    let mut delta = [[0.0; 3]; N_JOINTS];
    for j in 0..N_JOINTS {
        let local = axis_angle_to_matrix([theta[3 * j], theta[3 * j + 1], theta[3 * j + 2]]);
        match PARENTS[j] {
            None => world[j] = local,
            Some(p) => {
                world[j] = mat_mul(&world[p], &local);
                let rel = [
                    joints[j][0] - joints[p][0],
                    joints[j][1] - joints[p][1],
                    joints[j][2] - joints[p][2],
                ];
                let moved = mat_vec(&minus_identity(world[p]), rel);
                delta[j] = [delta[p][0] + moved[0], delta[p][1] + moved[1], delta[p][2] + moved[2]];
            }
        }
    }
    (world.map(minus_identity), delta)
}

/// Evaluates the head model at shape `beta`, pose `theta` (15 axis-angle
/// values) and expression `psi`.
pub fn evaluate_mesh(asset: &HeadAsset, beta: &[f64], theta: &[f64], psi: &[f64]) -> Result<Mesh> {
    check_dims(asset, beta, theta, psi)?;
    let shaped = shaped_vertices(asset, beta, psi);
    let joints = regress_joints(asset, &shaped);
    let (m, delta) = chain(theta, &joints);
    let weights = asset.skinning_weights();
    let mut out = shaped.clone();
    for v in 0..asset.n_vertices() {
        let p = [shaped[3 * v], shaped[3 * v + 1], shaped[3 * v + 2]];
        let mut disp = [0.0; 3];
        for (j, &w) in weights.row(v).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let rel = [p[0] - joints[j][0], p[1] - joints[j][1], p[2] - joints[j][2]];
            let turned = mat_vec(&m[j], rel);
            for c in 0..3 {
                disp[c] += w * (turned[c] + delta[j][c]);
            }
        }
        for c in 0..3 {
            out[3 * v + c] = p[c] + disp[c];
        }
    }
    Ok(Mesh {
        vertices: Tensor::new(vec![asset.n_vertices(), 3], out)?,
        faces: asset.shared_faces(),
    })
}

impl FaceParams {
    pub fn mesh(&self, asset: &HeadAsset) -> Result<Mesh> {
        evaluate_mesh(asset, &self.beta, &self.theta, &self.psi)
    }
}

/// Constant tensors for evaluating projected lip landmarks inside an autodiff
/// graph, restricted to the vertices the landmarks touch.
#[derive(Clone, Debug)]
pub struct LandmarkRig {
    n_sub: usize,
    n_landmarks: usize,
    d_beta: usize,
    /// `[d_psi, 3 * U]`, column `c * U + u`
    expr_sub: Tensor,
    /// `[d_beta, 3 * U]`
    shape_sub: Tensor,
    /// `[3 * U]`
    template_sub: Vec<f64>,
    /// `[d_psi, 3 * J]`, column `c * J + j`
    expr_joints: Tensor,
    /// `[d_beta, 3 * J]`
    shape_joints: Tensor,
    /// `[3 * J]`
    template_joints: Vec<f64>,
    /// `[J][U]`
    weights: Vec<Vec<f64>>,
    /// `[U, L]`
    bary: Tensor,
}

impl LandmarkRig {
    pub fn new(asset: &HeadAsset) -> Self {
        let mut sub: Vec<usize> = asset
            .lip_landmarks()
            .iter()
            .flat_map(|lm| asset.faces()[lm.face])
            .collect();
        sub.sort_unstable();
        sub.dedup();
        let u = sub.len();
        let l = asset.lip_landmarks().len();
        let (db, dp, nv) = (asset.d_beta(), asset.d_psi(), asset.n_vertices());
        let sb = asset.shape_basis().data();
        let eb = asset.expression_basis().data();
        let tmpl = asset.template().data();

        let mut expr_sub = Tensor::zeros(vec![dp, 3 * u]);
        let mut shape_sub = Tensor::zeros(vec![db, 3 * u]);
        let mut template_sub = vec![0.0; 3 * u];
        for (ui, &v) in sub.iter().enumerate() {
            for c in 0..3 {
                let col = c * u + ui;
                template_sub[col] = tmpl[3 * v + c];
                for k in 0..dp {
                    expr_sub.data_mut()[k * 3 * u + col] = eb[(3 * v + c) * dp + k];
                }
                for k in 0..db {
                    shape_sub.data_mut()[k * 3 * u + col] = sb[(3 * v + c) * db + k];
                }
            }
        }

        let j = N_JOINTS;
        let mut expr_joints = Tensor::zeros(vec![dp, 3 * j]);
        let mut shape_joints = Tensor::zeros(vec![db, 3 * j]);
        let mut template_joints = vec![0.0; 3 * j];
        for ji in 0..j {
            for (v, &w) in asset.joint_regressor().row(ji).iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for c in 0..3 {
                    let col = c * j + ji;
                    template_joints[col] += w * tmpl[3 * v + c];
                    for k in 0..dp {
                        expr_joints.data_mut()[k * 3 * j + col] += w * eb[(3 * v + c) * dp + k];
                    }
                    for k in 0..db {
                        shape_joints.data_mut()[k * 3 * j + col] += w * sb[(3 * v + c) * db + k];
                    }
                }
            }
        }
        debug_assert!(sub.iter().all(|&v| v < nv));

        let weights = (0..j)
            .map(|ji| sub.iter().map(|&v| asset.skinning_weights().row(v)[ji]).collect())
            .collect();
        let mut bary = Tensor::zeros(vec![u, l]);
        for (li, lm) in asset.lip_landmarks().iter().enumerate() {
            for (k, &v) in asset.faces()[lm.face].iter().enumerate() {
                let ui = sub.binary_search(&v).expect("landmark vertex in subset");
                bary.data_mut()[ui * l + li] += lm.bary[k];
            }
        }
        LandmarkRig {
            n_sub: u,
            n_landmarks: l,
            d_beta: db,
            expr_sub,
            shape_sub,
            template_sub,
            expr_joints,
            shape_joints,
            template_joints,
            weights,
            bary,
        }
    }

    pub fn n_landmarks(&self) -> usize {
        self.n_landmarks
    }

    /// Per-frame constant part `template + shape_basis * beta` in the rig's
    /// column layout.
    fn shaped_constant(&self, template: &[f64], shape: &Tensor, frames: &[FaceParams]) -> Tensor {
        let width = template.len();
        let mut out = Vec::with_capacity(frames.len() * width);
        for f in frames {
            for col in 0..width {
                let s: f64 = (0..self.d_beta)
                    .map(|k| shape.data()[k * width + col] * f.beta[k])
                    .sum();
                out.push(template[col] + s);
            }
        }
        Tensor::new(vec![frames.len(), width], out).expect("constant shape")
    }
}

/// Projected lip landmarks `[N, 2, L]` as a differentiable function of the
/// expression codes `psi` (`[N, d_psi]`) and jaw rotations `jaw` (`[N, 3]`).
/// Every other parameter (shape, non-jaw pose, camera) is taken from `frames`
/// as a constant.
pub fn lip_landmarks_2d_graph(
    g: &mut Graph,
    rig: &LandmarkRig,
    psi: NodeId,
    jaw: NodeId,
    frames: &[FaceParams],
) -> Result<NodeId> {
    let n = frames.len();
    let (u, l) = (rig.n_sub, rig.n_landmarks);
    if g.shape(psi) != [n, rig.expr_sub.shape()[0]] || g.shape(jaw) != [n, 3] {
        return Err(CoreError::arg(format!(
            "landmark graph: psi {:?} / jaw {:?} do not match {n} frames",
            g.shape(psi),
            g.shape(jaw)
        )));
    }
    if frames.iter().any(|f| f.beta.len() != rig.d_beta) {
        return Err(CoreError::arg("landmark graph: beta dimension mismatch"));
    }

    let expr_sub = g.constant(rig.expr_sub.clone());
    let base_v = g.constant(rig.shaped_constant(&rig.template_sub, &rig.shape_sub, frames));
    let dv = g.matmul(psi, expr_sub)?;
    let v = g.add(base_v, dv)?;
    let v = g.reshape(v, &[n, 3, u])?;

    let expr_j = g.constant(rig.expr_joints.clone());
    let base_j = g.constant(rig.shaped_constant(&rig.template_joints, &rig.shape_joints, frames));
    let dj = g.matmul(psi, expr_j)?;
    let joints = g.add(base_j, dj)?;
    let joints = g.reshape(joints, &[n, 3, N_JOINTS])?;

    let pose_part = |range: std::ops::Range<usize>| {
        let w = range.len();
        let data = frames.iter().flat_map(|f| f.theta[range.clone()].to_vec()).collect();
        Tensor::new(vec![n, w], data).expect("pose part")
    };
    let before = g.constant(pose_part(0..3 * JOINT_JAW));
    let after = g.constant(pose_part(3 * JOINT_JAW + 3..POSE_DIM));
    let theta = g.concat(&[before, jaw, after], 1)?;
    let theta = g.reshape(theta, &[n * N_JOINTS, 3])?;
    let local = g.rodrigues(theta)?;
    let local = g.reshape(local, &[n, N_JOINTS, 3, 3])?;
    let mut local_j = Vec::with_capacity(N_JOINTS);
    for j in 0..N_JOINTS {
        let s = g.slice(local, 1, j, 1)?;
        local_j.push(g.reshape(s, &[n, 3, 3])?);
    }

    let eye = {
        let mut t = Tensor::zeros(vec![n, 3, 3]);
        for i in 0..n {
            for d in 0..3 {
                t.data_mut()[i * 9 + d * 4] = 1.0;
            }
        }
        g.constant(t)
    };
    let mut world: Vec<NodeId> = Vec::with_capacity(N_JOINTS);
    let mut minus_id: Vec<NodeId> = Vec::with_capacity(N_JOINTS);
    let mut joint_pos: Vec<NodeId> = Vec::with_capacity(N_JOINTS);
    let mut delta: Vec<Option<NodeId>> = Vec::with_capacity(N_JOINTS);
    for j in 0..N_JOINTS {
        let jp = g.slice(joints, 2, j, 1)?;
        joint_pos.push(jp);
        match PARENTS[j] {
            None => {
                world.push(local_j[j]);
                delta.push(None);
            }
            Some(p) => {
                world.push(g.bmm(world[p], local_j[j])?);
                let rel = g.sub(jp, joint_pos[p])?;
                let moved = g.bmm(minus_id[p], rel)?;
                delta.push(Some(match delta[p] {
                    Some(dp) => g.add(dp, moved)?,
                    None => moved,
                }));
            }
        }
        minus_id.push(g.sub(world[j], eye)?);
    }

    let mut disp: Option<NodeId> = None;
    for j in 0..N_JOINTS {
        if rig.weights[j].iter().all(|w| *w == 0.0) {
            continue;
        }
        let jp = g.reshape(joint_pos[j], &[n, 3])?;
        let jp = g.repeat(jp, 2, u)?;
        let rel = g.sub(v, jp)?;
        let mut term = g.bmm(minus_id[j], rel)?;
        if let Some(d) = delta[j] {
            let d = g.reshape(d, &[n, 3])?;
            let d = g.repeat(d, 2, u)?;
            term = g.add(term, d)?;
        }
        let w = {
            let row: Vec<f64> = (0..n * 3).flat_map(|_| rig.weights[j].iter().copied()).collect();
            g.constant(Tensor::new(vec![n, 3, u], row)?)
        };
        let weighted = g.mul(term, w)?;
        disp = Some(match disp {
            Some(acc) => g.add(acc, weighted)?,
            None => weighted,
        });
    }
    let posed = match disp {
        Some(d) => g.add(v, d)?,
        None => v,
    };

    let flat = g.reshape(posed, &[n * 3, u])?;
    let bary = g.constant(rig.bary.clone());
    let lm = g.matmul(flat, bary)?;
    let lm = g.reshape(lm, &[n, 3, l])?;
    let xy = g.slice(lm, 1, 0, 2)?;

    let mut shift = Vec::with_capacity(n * 2 * l);
    let mut scale = Vec::with_capacity(n * 2 * l);
    for f in frames {
        for c in 0..2 {
            shift.extend(std::iter::repeat_n(f.camera[1 + c], l));
            scale.extend(std::iter::repeat_n(f.camera[0], l));
        }
    }
    let shift = g.constant(Tensor::new(vec![n, 2, l], shift)?);
    let scale = g.constant(Tensor::new(vec![n, 2, l], scale)?);
    let shifted = g.add(xy, shift)?;
    Ok(g.mul(shifted, scale)?)
}
