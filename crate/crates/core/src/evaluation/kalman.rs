use anim3d_numerics::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::params_io::ParamSequence;

/// Noise levels of the per-dimension constant-velocity model.
///
/// The state is `(position, velocity)` with unit time step. Process noise is
/// white acceleration of intensity `q`, giving the covariance
/// `q [[1/3, 1/2], [1/2, 1]]`; `r` is the observation variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmootherConfig {
    pub q: f64,
    pub r: f64,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        SmootherConfig { q: 1e-3, r: 1e-2 }
    }
}

impl SmootherConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("q", self.q), ("r", self.r)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CoreError::arg(format!("smoother noise `{name}` must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn process_covariance(&self) -> [[f64; 2]; 2] {
        let q = self.q;
        [[q / 3.0, q / 2.0], [q / 2.0, q]]
    }

    /// Prior covariance of the initial state, `1e4 r I`.
    pub fn prior_variance(&self) -> f64 {
        1e4 * self.r
    }
}

type M2 = [[f64; 2]; 2];

fn mul(a: &M2, b: &M2) -> M2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn transpose(a: &M2) -> M2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

fn add(a: &M2, b: &M2) -> M2 {
    [[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]]
}

fn inverse(a: &M2) -> M2 {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]]
}

fn apply(a: &M2, x: [f64; 2]) -> [f64; 2] {
    [a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]]
}

const F: M2 = [[1.0, 1.0], [0.0, 1.0]];

/// Forward Kalman filter and RTS backward pass for one scalar track.
pub fn smooth_track(obs: &[f64], config: &SmootherConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let t = obs.len();
    if t < 2 {
        return Err(CoreError::arg(format!("smoothing needs at least 2 samples, got {t}")));
    }
    let q = config.process_covariance();
    let r = config.r;
    let p0 = config.prior_variance();
    let ft = transpose(&F);

    let mut filt_x = Vec::with_capacity(t);
    let mut filt_p = Vec::with_capacity(t);
    let mut pred_x = Vec::with_capacity(t);
    let mut pred_p = Vec::with_capacity(t);
    let (mut x, mut p) = ([obs[0], 0.0], [[p0, 0.0], [0.0, p0]]);
    for (k, &y) in obs.iter().enumerate() {
        if k > 0 {
            x = apply(&F, x);
            p = add(&mul(&mul(&F, &p), &ft), &q);
        }
        pred_x.push(x);
        pred_p.push(p);
        let s = p[0][0] + r;
        let gain = [p[0][0] / s, p[1][0] / s];
        let innov = y - x[0];
        x = [x[0] + gain[0] * innov, x[1] + gain[1] * innov];
        p = [
            [p[0][0] - gain[0] * p[0][0], p[0][1] - gain[0] * p[0][1]],
            [p[1][0] - gain[1] * p[0][0], p[1][1] - gain[1] * p[0][1]],
        ];
        filt_x.push(x);
        filt_p.push(p);
    }

    let mut xs = filt_x[t - 1];
    let mut out = vec![0.0; t];
    out[t - 1] = xs[0];
    for k in (0..t - 1).rev() {
        let c = mul(&mul(&filt_p[k], &ft), &inverse(&pred_p[k + 1]));
        let dx = [xs[0] - pred_x[k + 1][0], xs[1] - pred_x[k + 1][1]];
        let corr = apply(&c, dx);
        xs = [filt_x[k][0] + corr[0], filt_x[k][1] + corr[1]];
        out[k] = xs[0];
    }
    Ok(out)
}

/// Smooths every column of a `[T, D]` sequence independently.
pub fn kalman_smooth(seq: &Tensor, config: &SmootherConfig) -> Result<Tensor> {
    let s = seq.shape();
    if s.len() != 2 {
        return Err(CoreError::arg(format!("sequence must be [T, D], got {s:?}")));
    }
    let (t, d) = (s[0], s[1]);
    config.validate()?;
    let mut out = vec![0.0; t * d];
    for j in 0..d {
        let col: Vec<f64> = (0..t).map(|i| seq.data()[i * d + j]).collect();
        for (i, v) in smooth_track(&col, config)?.into_iter().enumerate() {
            out[i * d + j] = v;
        }
    }
    Ok(Tensor::new(vec![t, d], out)?)
}

/// Smooths every parameter channel of a clip.
pub fn smooth_params(params: &ParamSequence, config: &SmootherConfig) -> Result<ParamSequence> {
    let mut out = params.clone();
    for name in crate::params_io::PARAM_GROUPS {
        let g = params.group(name)?;
        if g.shape()[1] == 0 {
            continue;
        }
        out.set_group(name, &kalman_smooth(&g, config)?)?;
    }
    out.validate()?;
    Ok(out)
}
