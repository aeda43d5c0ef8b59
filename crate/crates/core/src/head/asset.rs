use std::path::Path;
use std::sync::Arc;

use anim3d_numerics::Tensor;
use serde_json::Value;

use super::N_JOINTS;
use crate::container::{index_tensor, indices, Container};
use crate::error::{CoreError, Result};

const KIND: &str = "head_asset";
const SUM_TOL: f64 = 1e-9;

/// A lip landmark embedded in a mesh face by barycentric weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipLandmark {
    pub face: usize,
    pub bary: [f64; 3],
}

/// Static model data. Immutable once constructed; every constructor validates.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadAsset {
    template: Tensor,
    faces: Arc<[[usize; 3]]>,
    shape_basis: Tensor,
    expression_basis: Tensor,
    joint_regressor: Tensor,
    skinning_weights: Tensor,
    lip_landmarks: Vec<LipLandmark>,
    jaw_region: Vec<usize>,
    lip_vertices: Vec<usize>,
}

/// Unvalidated asset contents, turned into a [`HeadAsset`] by [`HeadAsset::new`].
#[derive(Clone, Debug)]
pub struct HeadAssetParts {
    /// `[n_v, 3]`
    pub template: Tensor,
    pub faces: Vec<[usize; 3]>,
    /// `[n_v, 3, d_beta]`
    pub shape_basis: Tensor,
    /// `[n_v, 3, d_psi]`
    pub expression_basis: Tensor,
    /// `[5, n_v]`
    pub joint_regressor: Tensor,
    /// `[n_v, 5]`
    pub skinning_weights: Tensor,
    pub lip_landmarks: Vec<LipLandmark>,
    /// Vertices rigidly attached to the jaw; may be empty.
    pub jaw_region: Vec<usize>,
    /// Vertices used for lip metrics. Empty means "parents of the lip landmarks".
    pub lip_vertices: Vec<usize>,
}

fn check_finite(name: &str, t: &Tensor) -> Result<()> {
    match t.data().iter().position(|v| !v.is_finite()) {
        Some(i) => Err(CoreError::invalid(name, format!("entry {i} is not finite"))),
        None => Ok(()),
    }
}

fn check_shape(name: &str, t: &Tensor, expected: &[usize]) -> Result<()> {
    if t.shape() != expected {
        return Err(CoreError::invalid(
            name,
            format!("shape {:?}, expected {expected:?}", t.shape()),
        ));
    }
    Ok(())
}

impl HeadAsset {
    pub fn new(parts: HeadAssetParts) -> Result<Self> {
        let HeadAssetParts {
            template,
            faces,
            shape_basis,
            expression_basis,
            joint_regressor,
            skinning_weights,
            lip_landmarks,
            jaw_region,
            mut lip_vertices,
        } = parts;
        if template.ndim() != 2 || template.shape()[1] != 3 {
            return Err(CoreError::invalid("template_vertices", format!("shape {:?}", template.shape())));
        }
        let n_v = template.shape()[0];
        let n_f = faces.len();
        if shape_basis.ndim() != 3 || expression_basis.ndim() != 3 {
            return Err(CoreError::invalid("basis", "blendshape bases must be [n_v, 3, D]"));
        }
        check_shape("shape_basis", &shape_basis, &[n_v, 3, shape_basis.shape()[2]])?;
        check_shape(
            "expression_basis",
            &expression_basis,
            &[n_v, 3, expression_basis.shape()[2]],
        )?;
        check_shape("joint_regressor", &joint_regressor, &[N_JOINTS, n_v])?;
        check_shape("skinning_weights", &skinning_weights, &[n_v, N_JOINTS])?;
        for (name, t) in [
            ("template_vertices", &template),
            ("shape_basis", &shape_basis),
            ("expression_basis", &expression_basis),
            ("joint_regressor", &joint_regressor),
            ("skinning_weights", &skinning_weights),
        ] {
            check_finite(name, t)?;
        }
        for v in 0..n_v {
            let row = skinning_weights.row(v);
            if row.iter().any(|w| *w < 0.0) {
                return Err(CoreError::invalid("skinning_weights", format!("row {v} has a negative weight")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > SUM_TOL {
                return Err(CoreError::invalid("skinning_weights", format!("row {v} sums to {s}")));
            }
        }
        for (i, f) in faces.iter().enumerate() {
            if f.iter().any(|&v| v >= n_v) {
                return Err(CoreError::invalid("faces", format!("face {i} references a vertex >= {n_v}")));
            }
        }
        for (i, lm) in lip_landmarks.iter().enumerate() {
            if lm.face >= n_f {
                return Err(CoreError::invalid(
                    "lip_landmark_faces",
                    format!("landmark {i} face {} >= {n_f}", lm.face),
                ));
            }
            if lm.bary.iter().any(|w| *w < 0.0 || !w.is_finite()) {
                return Err(CoreError::invalid("lip_landmark_bary", format!("landmark {i} has a negative weight")));
            }
            let s: f64 = lm.bary.iter().sum();
            if (s - 1.0).abs() > SUM_TOL {
                return Err(CoreError::invalid("lip_landmark_bary", format!("landmark {i} weights sum to {s}")));
            }
        }
        for (name, list) in [("jaw_region", &jaw_region), ("lip_vertices", &lip_vertices)] {
            if let Some(v) = list.iter().find(|&&v| v >= n_v) {
                return Err(CoreError::invalid(name, format!("vertex {v} >= {n_v}")));
            }
        }
        if lip_vertices.is_empty() {
            lip_vertices = lip_landmarks
                .iter()
                .flat_map(|lm| faces[lm.face])
                .collect();
            lip_vertices.sort_unstable();
            lip_vertices.dedup();
        }
        Ok(HeadAsset {
            template,
            faces: faces.into(),
            shape_basis,
            expression_basis,
            joint_regressor,
            skinning_weights,
            lip_landmarks,
            jaw_region,
            lip_vertices,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.template.shape()[0]
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn d_beta(&self) -> usize {
        self.shape_basis.shape()[2]
    }

    pub fn d_psi(&self) -> usize {
        self.expression_basis.shape()[2]
    }

    pub fn template(&self) -> &Tensor {
        &self.template
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub(crate) fn shared_faces(&self) -> Arc<[[usize; 3]]> {
        Arc::clone(&self.faces)
    }

    pub fn shape_basis(&self) -> &Tensor {
        &self.shape_basis
    }

    pub fn expression_basis(&self) -> &Tensor {
        &self.expression_basis
    }

    pub fn joint_regressor(&self) -> &Tensor {
        &self.joint_regressor
    }

    pub fn skinning_weights(&self) -> &Tensor {
        &self.skinning_weights
    }

    pub fn lip_landmarks(&self) -> &[LipLandmark] {
        &self.lip_landmarks
    }

    pub fn jaw_region(&self) -> &[usize] {
        &self.jaw_region
    }

    /// Vertex indices used by the lip metrics.
    pub fn lip_vertices(&self) -> &[usize] {
        &self.lip_vertices
    }

    /// Replaces the lip metric vertex list.
    pub fn with_lip_vertices(mut self, lip_vertices: Vec<usize>) -> Result<Self> {
        let n_v = self.n_vertices();
        if let Some(v) = lip_vertices.iter().find(|&&v| v >= n_v) {
            return Err(CoreError::invalid("lip_vertices", format!("vertex {v} >= {n_v}")));
        }
        self.lip_vertices = lip_vertices;
        Ok(self)
    }

    pub fn template_vertex(&self, v: usize) -> [f64; 3] {
        let r = self.template.row(v);
        [r[0], r[1], r[2]]
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::with_kind(KIND);
        c.set_meta("n_v", Value::from(self.n_vertices()));
        c.set_meta("n_f", Value::from(self.n_faces()));
        c.set_meta("d_beta", Value::from(self.d_beta()));
        c.set_meta("d_psi", Value::from(self.d_psi()));
        c.set_meta("n_joints", Value::from(N_JOINTS));
        c.insert("template_vertices", self.template.clone());
        c.insert(
            "faces",
            index_tensor(vec![self.n_faces(), 3], self.faces.iter().flatten().copied()),
        );
        c.insert("shape_basis", self.shape_basis.clone());
        c.insert("expression_basis", self.expression_basis.clone());
        c.insert("joint_regressor", self.joint_regressor.clone());
        c.insert("skinning_weights", self.skinning_weights.clone());
        let l = self.lip_landmarks.len();
        c.insert(
            "lip_landmark_faces",
            index_tensor(vec![l], self.lip_landmarks.iter().map(|lm| lm.face)),
        );
        c.insert(
            "lip_landmark_bary",
            Tensor::new(vec![l, 3], self.lip_landmarks.iter().flat_map(|lm| lm.bary).collect())
                .expect("bary shape"),
        );
        c.insert(
            "jaw_region",
            index_tensor(vec![self.jaw_region.len()], self.jaw_region.iter().copied()),
        );
        c.insert(
            "lip_vertices",
            index_tensor(vec![self.lip_vertices.len()], self.lip_vertices.iter().copied()),
        );
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(KIND)?;
        let template = c.get_shaped("template_vertices", &[None, Some(3)])?.clone();
        let n_v = template.shape()[0];
        let faces_t = c.get_shaped("faces", &[None, Some(3)])?;
        let flat = indices("faces", faces_t, n_v)?;
        let faces = flat.chunks(3).map(|f| [f[0], f[1], f[2]]).collect::<Vec<_>>();
        let lm_faces_t = c.get_shaped("lip_landmark_faces", &[None])?;
        let lm_faces = indices("lip_landmark_faces", lm_faces_t, faces.len())?;
        let bary = c.get_shaped("lip_landmark_bary", &[Some(lm_faces.len()), Some(3)])?;
        let lip_landmarks = lm_faces
            .iter()
            .enumerate()
            .map(|(i, &face)| {
                let r = bary.row(i);
                LipLandmark {
                    face,
                    bary: [r[0], r[1], r[2]],
                }
            })
            .collect();
        let optional_indices = |name: &str| -> Result<Vec<usize>> {
            match c.get_opt(name) {
                Some(t) => indices(name, t, n_v),
                None => Ok(Vec::new()),
            }
        };
        let asset = HeadAsset::new(HeadAssetParts {
            template,
            faces,
            shape_basis: c.get_shaped("shape_basis", &[Some(n_v), Some(3), None])?.clone(),
            expression_basis: c.get_shaped("expression_basis", &[Some(n_v), Some(3), None])?.clone(),
            joint_regressor: c.get_shaped("joint_regressor", &[Some(N_JOINTS), Some(n_v)])?.clone(),
            skinning_weights: c.get_shaped("skinning_weights", &[Some(n_v), Some(N_JOINTS)])?.clone(),
            lip_landmarks,
            jaw_region: optional_indices("jaw_region")?,
            lip_vertices: optional_indices("lip_vertices")?,
        })?;
        for (key, value) in [
            ("n_v", asset.n_vertices()),
            ("n_f", asset.n_faces()),
            ("d_beta", asset.d_beta()),
            ("d_psi", asset.d_psi()),
        ] {
            if let Ok(declared) = c.meta_usize(key) {
                if declared != value {
                    return Err(CoreError::schema(key, format!("metadata says {declared}, arrays say {value}")));
                }
            }
        }
        Ok(asset)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        HeadAsset::from_container(&Container::read(path)?)
    }
}
