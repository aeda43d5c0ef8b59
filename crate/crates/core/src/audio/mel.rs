use std::sync::Arc;

use anim3d_numerics::Tensor;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::wave::{Waveform, TARGET_RATE};
use crate::error::{CoreError, Result};

pub const N_FFT: usize = 800;
pub const HOP_LENGTH: usize = 200;
pub const N_MELS: usize = 80;
pub const HOP_SECONDS: f64 = HOP_LENGTH as f64 / TARGET_RATE as f64;
pub const LOG_FLOOR: f64 = 1e-5;
/// Mel rows per video-frame window (0.2 s).
pub const WINDOW_ROWS: usize = 16;
const F_MAX: f64 = 8000.0;

#[derive(Clone, Debug, PartialEq)]
pub struct MelGram {
    /// `[S, 80]` natural-log mel magnitudes.
    pub frames: Tensor,
    pub hop_seconds: f64,
    pub origin_time: f64,
}

impl MelGram {
    pub fn n_frames(&self) -> usize {
        self.frames.shape()[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AudioWindow {
    /// `[16, 80]`
    pub values: Tensor,
    pub center_time: f64,
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-scale filters over `0..=8000` Hz, each scaled to unit area
/// in Hz. Returns `[80, N_FFT / 2 + 1]`.
pub fn mel_filterbank() -> Tensor {
    let n_bins = N_FFT / 2 + 1;
    let mel_max = hz_to_mel(F_MAX);
    let edges: Vec<f64> = (0..N_MELS + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (N_MELS + 1) as f64))
        .collect();
    let mut bank = Tensor::zeros(vec![N_MELS, n_bins]);
    for m in 0..N_MELS {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let area = 2.0 / (hi - lo);
        for k in 0..n_bins {
            let f = k as f64 * TARGET_RATE as f64 / N_FFT as f64;
            let rise = (f - lo) / (center - lo);
            let fall = (hi - f) / (hi - center);
            let w = rise.min(fall).max(0.0);
            bank.data_mut()[m * n_bins + k] = area * w;
        }
    }
    bank
}

/// Center frequency of each mel filter in Hz.
pub fn mel_centers() -> Vec<f64> {
    let mel_max = hz_to_mel(F_MAX);
    (1..=N_MELS)
        .map(|i| mel_to_hz(mel_max * i as f64 / (N_MELS + 1) as f64))
        .collect()
}

/// Reflect-without-edge-repeat index into a signal of length `len`, valid
/// for any offset.
fn mirror(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let r = i.rem_euclid(period);
    if r < len as isize {
        r as usize
    } else {
        (period - r) as usize
    }
}

struct Stft {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
}

impl Stft {
    fn new() -> Self {
        let window = (0..N_FFT)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / N_FFT as f64).cos())
            .collect();
        Stft {
            fft: FftPlanner::new().plan_fft_forward(N_FFT),
            window,
        }
    }

    /// Magnitude spectrum of the frame centered on sample `center`.
    fn magnitude(&self, samples: &[f64], center: usize, buf: &mut [Complex<f64>]) -> Vec<f64> {
        let start = center as isize - (N_FFT / 2) as isize;
        for (n, slot) in buf.iter_mut().enumerate() {
            let x = if samples.is_empty() { 0.0 } else { samples[mirror(start + n as isize, samples.len())] };
            *slot = Complex::new(x * self.window[n], 0.0);
        }
        self.fft.process(buf);
        buf[..N_FFT / 2 + 1].iter().map(|c| c.norm()).collect()
    }
}

/// Log-mel spectrogram with `1 + floor(len / 200)` rows.
pub fn mel_spectrogram(wave: &Waveform) -> Result<MelGram> {
    if wave.sample_rate != TARGET_RATE {
        return Err(CoreError::arg(format!(
            "mel spectrogram needs {TARGET_RATE} Hz audio, got {} Hz",
            wave.sample_rate
        )));
    }
    let n_frames = 1 + wave.samples.len() / HOP_LENGTH;
    let stft = Stft::new();
    let bank = mel_filterbank();
    let n_bins = N_FFT / 2 + 1;
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    let mut out = Vec::with_capacity(n_frames * N_MELS);
    for s in 0..n_frames {
        let mag = stft.magnitude(&wave.samples, s * HOP_LENGTH, &mut buf);
        for m in 0..N_MELS {
            let row = &bank.data()[m * n_bins..(m + 1) * n_bins];
            let e: f64 = row.iter().zip(&mag).map(|(w, a)| w * a).sum();
            out.push(e.max(LOG_FLOOR).ln());
        }
    }
    Ok(MelGram {
        frames: Tensor::new(vec![n_frames, N_MELS], out)?,
        hop_seconds: HOP_SECONDS,
        origin_time: 0.0,
    })
}

/// One 16x80 window per video frame, centered on the frame's timestamp.
/// Rows outside the spectrogram are filled with the log floor.
pub fn frame_windows(mel: &MelGram, fps: f64, n_frames: usize) -> Result<Vec<AudioWindow>> {
    if !(fps > 0.0) || !fps.is_finite() {
        return Err(CoreError::arg(format!("fps must be positive, got {fps}")));
    }
    let floor = LOG_FLOOR.ln();
    let rows = mel.n_frames() as isize;
    let half = (WINDOW_ROWS / 2) as isize;
    Ok((0..n_frames)
        .map(|t| {
            let time = t as f64 / fps;
            let c = ((time - mel.origin_time) / mel.hop_seconds).round() as isize;
            let mut values = Vec::with_capacity(WINDOW_ROWS * N_MELS);
            for r in c - half..c + half {
                if (0..rows).contains(&r) {
                    values.extend_from_slice(mel.frames.row(r as usize));
                } else {
                    values.extend(std::iter::repeat_n(floor, N_MELS));
                }
            }
            AudioWindow {
                values: Tensor::new(vec![WINDOW_ROWS, N_MELS], values).expect("window shape"),
                center_time: time,
            }
        })
        .collect())
}

/// Stacks windows into `[n, 16, 80]`.
pub fn stack_windows(windows: &[AudioWindow]) -> Tensor {
    let data = windows.iter().flat_map(|w| w.values.data().iter().copied()).collect();
    Tensor::new(vec![windows.len(), WINDOW_ROWS, N_MELS], data).expect("stacked windows")
}
