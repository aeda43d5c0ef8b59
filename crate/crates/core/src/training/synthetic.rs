//! Deterministic synthetic clips whose audio is a function of the facial
//! motion, so a network can learn the mapping back.
//!
//! Each clip carries smooth random trajectories for the expression codes and
//! jaw opening. The audio at 16 kHz is a sum of tones: a 220 Hz tone whose
//! amplitude follows the jaw opening, and one tone per expression dimension,
//! placed at a distinct mel-filter center, whose amplitude is exponential in
//! that code. Log-mel features are then close to linear in the codes.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::ClipRecord;
use super::losses::projected_lips;
use crate::audio::{mel_centers, Waveform, N_MELS, TARGET_RATE};
use crate::error::{CoreError, Result};
use crate::head::{FaceParams, HeadAsset, JOINT_JAW};

pub const SYNTH_FPS: f64 = 25.0;
pub const SYNTH_STYLES: usize = 4;
pub const SYNTH_IDENTITIES: usize = 2;
pub const SYNTH_ALBEDO_DIM: usize = 4;
const JAW_TONE_HZ: f64 = 220.0;
const MAX_JAW: f64 = 0.35;
const PSI_CLIP: f64 = 2.5;
const FIRST_PSI_BIN: usize = 14;
const NOISE_AMPLITUDE: f64 = 0.0002;

/// Two passes of a one-pole low-pass over white noise, standardized.
fn smooth_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut x: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
    for _ in 0..2 {
        let mut state = x[0];
        for v in x.iter_mut() {
            state = 0.9 * state + 0.1 * *v;
            *v = state;
        }
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let std = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
    x.iter().map(|v| if std > 1e-12 { (v - mean) / std } else { 0.0 }).collect()
}

/// Frequency of the tone carrying expression dimension `k`.
fn psi_tone_hz(k: usize, d_psi: usize) -> f64 {
    let centers = mel_centers();
    let span = N_MELS - 2 - FIRST_PSI_BIN;
    let step = (span / d_psi).max(1);
    centers[FIRST_PSI_BIN + (k * step) % span]
}

/// Linear interpolation of a per-frame envelope at fractional frame `u`.
fn lerp(env: &[f64], u: f64) -> f64 {
    let i = (u.floor() as usize).min(env.len() - 1);
    let j = (i + 1).min(env.len() - 1);
    let f = (u - i as f64).clamp(0.0, 1.0);
    env[i] * (1.0 - f) + env[j] * f
}

/// `n_clips` clips of `n_frames` frames at 25 fps, deterministic in `seed`.
pub fn make_synthetic_dataset(seed: u64, n_clips: usize, n_frames: usize, asset: &HeadAsset) -> Result<Vec<ClipRecord>> {
    if n_clips == 0 || n_frames == 0 {
        return Err(CoreError::arg("synthetic dataset needs at least one clip and one frame"));
    }
    let (d_beta, d_psi) = (asset.d_beta(), asset.d_psi());
    let identities: Vec<Vec<f64>> = (0..SYNTH_IDENTITIES)
        .map(|id| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x1d_u64 << 32) ^ id as u64);
            let normal = Normal::new(0.0, 0.5).expect("normal");
            (0..d_beta).map(|_| normal.sample(&mut rng)).collect()
        })
        .collect();
    let tones: Vec<f64> = (0..d_psi).map(|k| psi_tone_hz(k, d_psi)).collect();
    let samples_per_frame = TARGET_RATE as f64 / SYNTH_FPS;
    let n_samples = (n_frames as f64 * samples_per_frame).round() as usize;

    (0..n_clips)
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(c as u64));
            let style_id = c % SYNTH_STYLES;
            let identity_id = c % SYNTH_IDENTITIES;
            let amplitude = 0.6 + 0.25 * style_id as f64;
            let psi: Vec<Vec<f64>> = (0..d_psi)
                .map(|_| {
                    smooth_noise(&mut rng, n_frames)
                        .into_iter()
                        .map(|v| (amplitude * v).clamp(-PSI_CLIP, PSI_CLIP))
                        .collect()
                })
                .collect();
            let jaw: Vec<f64> = smooth_noise(&mut rng, n_frames)
                .into_iter()
                .map(|v| 0.5 * MAX_JAW * (1.0 + (amplitude * v).tanh()))
                .collect();
            let phases: Vec<f64> = (0..d_psi).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            let noise = Normal::new(0.0, NOISE_AMPLITUDE).expect("normal");

            let tone_gain = 0.45 / d_psi as f64;
            let mut tone_env: Vec<Vec<f64>> = psi
                .iter()
                .map(|track| track.iter().map(|p| tone_gain * (0.8 * (p - PSI_CLIP)).exp()).collect())
                .collect();
            tone_env.push(jaw.iter().map(|j| 0.05 + j).collect());
            let samples = (0..n_samples)
                .map(|n| {
                    let time = n as f64 / TARGET_RATE as f64;
                    let u = n as f64 / samples_per_frame;
                    let mut s = lerp(&tone_env[d_psi], u) * (2.0 * PI * JAW_TONE_HZ * time).sin();
                    for k in 0..d_psi {
                        s += lerp(&tone_env[k], u) * (2.0 * PI * tones[k] * time + phases[k]).sin();
                    }
                    s + noise.sample(&mut rng)
                })
                .collect();

            let frames: Vec<FaceParams> = (0..n_frames)
                .map(|t| {
                    let mut f = FaceParams::neutral(d_beta, d_psi, SYNTH_ALBEDO_DIM);
                    f.beta = identities[identity_id].clone();
                    f.psi = psi.iter().map(|track| track[t]).collect();
                    f.set_joint_pose(JOINT_JAW, [jaw[t], 0.0, 0.0]);
                    f.camera = [1.0 + 0.1 * identity_id as f64, 0.0, 0.0];
                    f
                })
                .collect();
            let lips = frames
                .iter()
                .map(|f| projected_lips(asset, f))
                .collect::<Result<Vec<_>>>()?;
            Ok(ClipRecord {
                clip_id: format!("clip_{c:03}"),
                fps: SYNTH_FPS,
                frames,
                audio: Waveform::new(samples, TARGET_RATE)?,
                gt_lip_2d: Some(lips),
                style_id,
                identity_id,
            })
        })
        .collect()
}
