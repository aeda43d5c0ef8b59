use crate::error::{CoreError, Result};

/// Global, neck, jaw and two eye rotations, 3 axis-angle values each.
pub const POSE_DIM: usize = 15;
/// Second-order spherical harmonics, 9 coefficients per color channel.
pub const LIGHTING_DIM: usize = 27;

/// One frame of reconstruction parameters.
///
/// Albedo and lighting are carried through unchanged; nothing in this crate
/// renders with them.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceParams {
    pub beta: Vec<f64>,
    pub theta: [f64; POSE_DIM],
    pub psi: Vec<f64>,
    pub albedo: Vec<f64>,
    pub lighting: [f64; LIGHTING_DIM],
    /// Weak-perspective camera `(scale, tx, ty)`.
    pub camera: [f64; 3],
}

impl FaceParams {
    pub fn neutral(d_beta: usize, d_psi: usize, d_alpha: usize) -> Self {
        FaceParams {
            beta: vec![0.0; d_beta],
            theta: [0.0; POSE_DIM],
            psi: vec![0.0; d_psi],
            albedo: vec![0.0; d_alpha],
            lighting: [0.0; LIGHTING_DIM],
            camera: [1.0, 0.0, 0.0],
        }
    }

    pub fn joint_pose(&self, joint: usize) -> [f64; 3] {
        [
            self.theta[3 * joint],
            self.theta[3 * joint + 1],
            self.theta[3 * joint + 2],
        ]
    }

    pub fn set_joint_pose(&mut self, joint: usize, r: [f64; 3]) {
        self.theta[3 * joint..3 * joint + 3].copy_from_slice(&r);
    }

    pub fn validate(&self) -> Result<()> {
        let groups: [(&str, &[f64]); 6] = [
            ("beta", &self.beta),
            ("theta", &self.theta),
            ("psi", &self.psi),
            ("albedo", &self.albedo),
            ("lighting", &self.lighting),
            ("camera", &self.camera),
        ];
        for (name, values) in groups {
            if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                return Err(CoreError::invalid(name, format!("entry {i} is not finite")));
            }
        }
        for j in 0..POSE_DIM / 3 {
            let r = self.joint_pose(j);
            let norm = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
            if norm >= std::f64::consts::PI {
                return Err(CoreError::invalid(
                    "theta",
                    format!("joint {j} rotation angle {norm} is not below pi"),
                ));
            }
        }
        if self.camera[0] <= 0.0 {
            return Err(CoreError::invalid("camera", "scale must be positive"));
        }
        Ok(())
    }
}
