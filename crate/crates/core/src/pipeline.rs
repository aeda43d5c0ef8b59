//! Audio in, per-frame face parameters out.

use crate::audio::{frame_windows, mel_spectrogram, resample, Waveform, TARGET_RATE};
use crate::error::{CoreError, Result};
use crate::generator::{assemble_animation, GeneratorWeights, StyleCode};
use crate::head::FaceParams;

/// Number of video frames covering `audio` at `fps`.
pub fn frame_count(audio: &Waveform, fps: f64) -> usize {
    (audio.duration() * fps).round() as usize
}

/// Generates one frame per `1/fps` seconds of audio. Missing cameras default
/// to `(1, 0, 0)`.
pub fn animate(
    weights: &GeneratorWeights,
    audio: &Waveform,
    reference: &FaceParams,
    style: &StyleCode,
    fps: f64,
    cameras: Option<&[[f64; 3]]>,
    overlap: usize,
) -> Result<Vec<FaceParams>> {
    if !(fps > 0.0) || !fps.is_finite() {
        return Err(CoreError::arg(format!("fps must be positive, got {fps}")));
    }
    let n = frame_count(audio, fps);
    if n == 0 {
        return Err(CoreError::arg("audio is shorter than one frame"));
    }
    let audio = resample(audio, TARGET_RATE)?;
    let mel = mel_spectrogram(&audio)?;
    let windows = frame_windows(&mel, fps, n)?;
    let (psi, jaw) = weights.generate_crossfaded(&windows, style, overlap)?;
    let default_cameras = vec![[1.0, 0.0, 0.0]; n];
    let cameras = match cameras {
        Some(c) if c.len() < n => {
            return Err(CoreError::arg(format!("{} cameras for {n} frames", c.len())));
        }
        Some(c) => &c[..n],
        None => &default_cameras,
    };
    assemble_animation(reference, &psi, &jaw, cameras, None)
}
