//! Per-frame parameter sequences and lip landmark arrays on disk.

use std::path::Path;

use anim3d_numerics::Tensor;
use serde_json::Value;

use crate::container::Container;
use crate::error::{CoreError, Result};
use crate::head::{FaceParams, LIGHTING_DIM, POSE_DIM};

const PARAMS_KIND: &str = "params";
const LIPS_KIND: &str = "lip2d";

/// A clip's parameter sequence with its frame rate.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSequence {
    pub fps: f64,
    pub frames: Vec<FaceParams>,
}

fn stack(name: &str, frames: &[FaceParams], get: impl Fn(&FaceParams) -> &[f64]) -> Result<Tensor> {
    let width = frames.first().map_or(0, |f| get(f).len());
    if let Some(i) = frames.iter().position(|f| get(f).len() != width) {
        return Err(CoreError::invalid(name, format!("frame {i} has a different dimension")));
    }
    let data = frames.iter().flat_map(|f| get(f).iter().copied()).collect();
    Ok(Tensor::new(vec![frames.len(), width], data)?)
}

impl ParamSequence {
    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0) || !self.fps.is_finite() {
            return Err(CoreError::invalid("fps", format!("must be positive, got {}", self.fps)));
        }
        let Some(first) = self.frames.first() else {
            return Err(CoreError::invalid("frames", "sequence is empty"));
        };
        for (i, f) in self.frames.iter().enumerate() {
            if (f.beta.len(), f.psi.len(), f.albedo.len()) != (first.beta.len(), first.psi.len(), first.albedo.len()) {
                return Err(CoreError::invalid("frames", format!("frame {i} dimensions differ from frame 0")));
            }
            f.validate()
                .map_err(|e| CoreError::invalid(format!("frame {i}"), e.to_string()))?;
        }
        Ok(())
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::with_kind(PARAMS_KIND);
        c.set_meta("fps", Value::from(self.fps));
        c.set_meta("n_frames", Value::from(self.frames.len()));
        let f = &self.frames;
        c.insert("beta", stack("beta", f, |p| &p.beta)?);
        c.insert("theta", stack("theta", f, |p| &p.theta)?);
        c.insert("psi", stack("psi", f, |p| &p.psi)?);
        c.insert("albedo", stack("albedo", f, |p| &p.albedo)?);
        c.insert("lighting", stack("lighting", f, |p| &p.lighting)?);
        c.insert("camera", stack("camera", f, |p| &p.camera)?);
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(PARAMS_KIND)?;
        let fps = c.meta_f64("fps")?;
        let theta = c.get_shaped("theta", &[None, Some(POSE_DIM)])?;
        let t = theta.shape()[0];
        let beta = c.get_shaped("beta", &[Some(t), None])?;
        let psi = c.get_shaped("psi", &[Some(t), None])?;
        let albedo = c.get_shaped("albedo", &[Some(t), None])?;
        let lighting = c.get_shaped("lighting", &[Some(t), Some(LIGHTING_DIM)])?;
        let camera = c.get_shaped("camera", &[Some(t), Some(3)])?;
        let frames = (0..t)
            .map(|i| FaceParams {
                beta: beta.row(i).to_vec(),
                theta: theta.row(i).try_into().expect("pose width"),
                psi: psi.row(i).to_vec(),
                albedo: albedo.row(i).to_vec(),
                lighting: lighting.row(i).try_into().expect("lighting width"),
                camera: camera.row(i).try_into().expect("camera width"),
            })
            .collect();
        let seq = ParamSequence { fps, frames };
        seq.validate()?;
        Ok(seq)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        ParamSequence::from_container(&Container::read(path)?)
    }

    /// `[T, width]` view of one parameter group: "beta", "theta", "psi",
    /// "albedo", "lighting" or "camera".
    pub fn group(&self, name: &str) -> Result<Tensor> {
        let f = &self.frames;
        match name {
            "beta" => stack(name, f, |p| &p.beta),
            "theta" => stack(name, f, |p| &p.theta),
            "psi" => stack(name, f, |p| &p.psi),
            "albedo" => stack(name, f, |p| &p.albedo),
            "lighting" => stack(name, f, |p| &p.lighting),
            "camera" => stack(name, f, |p| &p.camera),
            other => Err(CoreError::arg(format!("unknown parameter group `{other}`"))),
        }
    }

    /// Overwrites one parameter group from a `[T, width]` tensor.
    pub fn set_group(&mut self, name: &str, values: &Tensor) -> Result<()> {
        let current = self.group(name)?;
        if current.shape() != values.shape() {
            return Err(CoreError::arg(format!(
                "`{name}` is {:?}, got {:?}",
                current.shape(),
                values.shape()
            )));
        }
        for (i, f) in self.frames.iter_mut().enumerate() {
            let row = values.row(i);
            match name {
                "beta" => f.beta.copy_from_slice(row),
                "theta" => f.theta.copy_from_slice(row),
                "psi" => f.psi.copy_from_slice(row),
                "albedo" => f.albedo.copy_from_slice(row),
                "lighting" => f.lighting.copy_from_slice(row),
                _ => f.camera.copy_from_slice(row),
            }
        }
        Ok(())
    }
}

pub const PARAM_GROUPS: [&str; 6] = ["beta", "theta", "psi", "albedo", "lighting", "camera"];

/// Writes per-frame 2D lip landmarks as `[T, L, 2]`.
pub fn save_lips(path: &Path, lips: &[Vec<[f64; 2]>]) -> Result<()> {
    let l = lips.first().map_or(0, Vec::len);
    if lips.iter().any(|f| f.len() != l) {
        return Err(CoreError::invalid("lip2d", "frames have different landmark counts"));
    }
    let data = lips.iter().flatten().flat_map(|p| *p).collect();
    let mut c = Container::with_kind(LIPS_KIND);
    c.insert("lip2d", Tensor::new(vec![lips.len(), l, 2], data)?);
    c.write(path)
}

pub fn load_lips(path: &Path) -> Result<Vec<Vec<[f64; 2]>>> {
    let c = Container::read(path)?;
    c.expect_kind(LIPS_KIND)?;
    let t = c.get_shaped("lip2d", &[None, None, Some(2)])?;
    if !t.all_finite() {
        let i = t.data().iter().position(|v| !v.is_finite()).unwrap_or(0);
        return Err(CoreError::invalid("lip2d", format!("entry {i} is not finite")));
    }
    let (n, l) = (t.shape()[0], t.shape()[1]);
    Ok((0..n)
        .map(|i| (0..l).map(|k| [t.data()[(i * l + k) * 2], t.data()[(i * l + k) * 2 + 1]]).collect())
        .collect())
}
