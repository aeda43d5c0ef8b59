//! Procedural stand-in for a real head asset: a noisy half-cylinder "face"
//! with an upper head, a jaw block below the mouth line and a ring of lip
//! landmarks on either side of it.

use std::f64::consts::FRAC_PI_2;

use anim3d_numerics::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::asset::{HeadAsset, HeadAssetParts, LipLandmark};
use super::{JOINT_GLOBAL, JOINT_JAW, JOINT_LEFT_EYE, JOINT_NECK, JOINT_RIGHT_EYE, N_JOINTS};
use crate::error::{CoreError, Result};

/// Landmarks per toy asset: the first half on the upper lip, the rest on the lower lip.
pub const DEFAULT_LIP_LANDMARKS: usize = 20;

const RADIUS: f64 = 0.8;
const NOISE: f64 = 0.01;
const BASIS_STD: f64 = 0.02;
/// Expression dimensions given a deliberate mouth shape on top of the noise.
const MOUTH_OPEN_DIM: usize = 0;
const MOUTH_WIDE_DIM: usize = 3;

struct Grid {
    cols: usize,
    rows: usize,
    n_v: usize,
}

impl Grid {
    fn new(n_v: usize) -> Self {
        let cols = ((n_v as f64 / 2.0).sqrt().floor() as usize).max(2);
        Grid {
            cols,
            rows: n_v.div_ceil(cols),
            n_v,
        }
    }

    fn row_len(&self, r: usize) -> usize {
        (self.n_v - r * self.cols).min(self.cols)
    }

    fn index(&self, r: usize, c: usize) -> usize {
        r * self.cols + c
    }

    /// Rows `0..upper_rows()` form the upper head, the rest the jaw.
    fn upper_rows(&self) -> usize {
        self.rows / 2
    }

    /// Two triangles per quad between rows `r` and `r + 1`; a short last row
    /// is closed with a fan onto its final vertex.
    fn strip(&self, r: usize) -> Vec<[usize; 3]> {
        let below = self.row_len(r + 1);
        let mut faces = Vec::new();
        for c in 0..below.saturating_sub(1) {
            let (a, b) = (self.index(r, c), self.index(r, c + 1));
            let (d, e) = (self.index(r + 1, c), self.index(r + 1, c + 1));
            faces.push([a, d, b]);
            faces.push([b, d, e]);
        }
        let last = self.index(r + 1, below - 1);
        for c in below - 1..self.cols - 1 {
            faces.push([self.index(r, c), last, self.index(r, c + 1)]);
        }
        faces
    }
}

/// Builds a deterministic toy asset with `n_v` vertices.
pub fn generate_toy_asset(seed: u64, n_v: usize, d_beta: usize, d_psi: usize) -> Result<HeadAsset> {
    if n_v < 8 {
        return Err(CoreError::arg(format!("toy asset needs n_v >= 8, got {n_v}")));
    }
    if d_beta == 0 || d_psi == 0 {
        return Err(CoreError::arg("toy asset needs d_beta >= 1 and d_psi >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, NOISE).expect("valid normal");
    let basis = Normal::new(0.0, BASIS_STD).expect("valid normal");
    let grid = Grid::new(n_v);
    let upper = grid.upper_rows();

    let mut template = Vec::with_capacity(3 * n_v);
    for v in 0..n_v {
        let (r, c) = (v / grid.cols, v % grid.cols);
        let phi = -FRAC_PI_2 + std::f64::consts::PI * c as f64 / (grid.cols - 1) as f64;
        let y = 1.0 - 2.0 * r as f64 / (grid.rows - 1) as f64;
        template.push(RADIUS * phi.sin() + noise.sample(&mut rng));
        template.push(y + noise.sample(&mut rng));
        template.push(RADIUS * phi.cos() + noise.sample(&mut rng));
    }
    // Centering puts the uniformly regressed global joint at the origin.
    for c in 0..3 {
        let mean = (0..n_v).map(|v| template[3 * v + c]).sum::<f64>() / n_v as f64;
        for v in 0..n_v {
            template[3 * v + c] -= mean;
        }
    }

    let faces: Vec<[usize; 3]> = (0..grid.rows - 1).flat_map(|r| grid.strip(r)).collect();

    let mut skinning = vec![0.0; n_v * N_JOINTS];
    let mut jaw_region = Vec::new();
    for v in 0..n_v {
        let (r, c) = (v / grid.cols, v % grid.cols);
        let w = &mut skinning[v * N_JOINTS..(v + 1) * N_JOINTS];
        if r >= upper {
            w[JOINT_JAW] = 1.0;
            jaw_region.push(v);
        } else if r == 0 {
            let eye = if 2 * c < grid.cols { JOINT_LEFT_EYE } else { JOINT_RIGHT_EYE };
            w[JOINT_NECK] = 0.5;
            w[eye] = 0.5;
        } else {
            w[JOINT_GLOBAL] = 0.25;
            w[JOINT_NECK] = 0.75;
        }
    }

    let mut regressor = vec![0.0; N_JOINTS * n_v];
    let mut spread = |joint: usize, verts: &[usize]| {
        for &v in verts {
            regressor[joint * n_v + v] = 1.0 / verts.len() as f64;
        }
    };
    let row = |r: usize| (0..grid.row_len(r)).map(|c| grid.index(r, c)).collect::<Vec<_>>();
    let last_full = if grid.row_len(grid.rows - 1) == grid.cols { grid.rows - 1 } else { grid.rows - 2 };
    let top = row(0);
    let half = grid.cols / 2;
    spread(JOINT_GLOBAL, &(0..n_v).collect::<Vec<_>>());
    spread(JOINT_NECK, &row(last_full));
    spread(JOINT_JAW, &row(upper - 1));
    spread(JOINT_LEFT_EYE, &top[..half]);
    spread(JOINT_RIGHT_EYE, &top[half..]);

    let mut shape_basis = vec![0.0; n_v * 3 * d_beta];
    for x in &mut shape_basis {
        *x = basis.sample(&mut rng);
    }
    let mut expression_basis = vec![0.0; n_v * 3 * d_psi];
    for x in &mut expression_basis {
        *x = basis.sample(&mut rng);
    }
    let mouth_line = upper as f64 - 0.5;
    for v in 0..n_v {
        let r = v / grid.cols;
        let falloff = (-(r as f64 - mouth_line).powi(2) / 2.0).exp();
        let x = template[3 * v];
        let y_dir = if r >= upper { -1.0 } else { 1.0 };
        expression_basis[(3 * v + 1) * d_psi + MOUTH_OPEN_DIM] += 0.08 * y_dir * falloff;
        if d_psi > MOUTH_WIDE_DIM {
            expression_basis[3 * v * d_psi + MOUTH_WIDE_DIM] += 0.08 * x * falloff;
        }
    }

    let mut landmarks = Vec::with_capacity(DEFAULT_LIP_LANDMARKS);
    let upper_strip = grid.strip(upper - 2);
    let lower_strip = grid.strip(upper);
    let offset_upper = (0..upper - 2).map(|r| grid.strip(r).len()).sum::<usize>();
    let offset_lower = offset_upper + upper_strip.len() + grid.strip(upper - 1).len();
    for k in 0..DEFAULT_LIP_LANDMARKS {
        let (offset, len, i) = if k < DEFAULT_LIP_LANDMARKS / 2 {
            (offset_upper, upper_strip.len(), k)
        } else {
            (offset_lower, lower_strip.len(), k - DEFAULT_LIP_LANDMARKS / 2)
        };
        let raw: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.05..1.0));
        let s: f64 = raw.iter().sum();
        landmarks.push(LipLandmark {
            face: offset + i % len,
            bary: raw.map(|w| w / s),
        });
    }

    HeadAsset::new(HeadAssetParts {
        template: Tensor::new(vec![n_v, 3], template)?,
        faces,
        shape_basis: Tensor::new(vec![n_v, 3, d_beta], shape_basis)?,
        expression_basis: Tensor::new(vec![n_v, 3, d_psi], expression_basis)?,
        joint_regressor: Tensor::new(vec![N_JOINTS, n_v], regressor)?,
        skinning_weights: Tensor::new(vec![n_v, N_JOINTS], skinning)?,
        lip_landmarks: landmarks,
        jaw_region,
        lip_vertices: Vec::new(),
    })
}
