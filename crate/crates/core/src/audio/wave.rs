use std::f64::consts::PI;
use std::path::Path;

use crate::container::atomic_write;
use crate::error::{CoreError, Result};

/// Rate every model input is resampled to.
pub const TARGET_RATE: u32 = 16_000;

/// Zero crossings of the sinc kernel kept on each side, at the lower of the two rates.
const SINC_ZEROS: f64 = 16.0;
const KAISER_BETA: f64 = 8.6;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(CoreError::arg("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(CoreError::invalid("samples", format!("sample {i} is not finite")));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Modified Bessel function of the first kind, order zero.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Kaiser-windowed sinc interpolation. Output length is
/// `round(len * target / source)`. The taps used for each output sample are
/// renormalized to sum to one, so constant signals stay constant up to the
/// edges.
pub fn resample(wave: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(CoreError::arg("target rate must be positive"));
    }
    if wave.samples.is_empty() {
        return Err(CoreError::arg("cannot resample an empty waveform"));
    }
    if target_rate == wave.sample_rate {
        return Ok(wave.clone());
    }
    let ratio = target_rate as f64 / wave.sample_rate as f64;
    let cutoff = ratio.min(1.0);
    let half_width = SINC_ZEROS / cutoff;
    let n_in = wave.samples.len() as isize;
    let n_out = (wave.samples.len() as f64 * ratio).round() as usize;
    let norm = bessel_i0(KAISER_BETA);
    let mut out = Vec::with_capacity(n_out);
    for n in 0..n_out {
        let t = n as f64 / ratio;
        let lo = ((t - half_width).ceil() as isize).max(0);
        let hi = ((t + half_width).floor() as isize).min(n_in - 1);
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for i in lo..=hi {
            let x = i as f64 - t;
            let r = x / half_width;
            let window = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / norm;
            let w = cutoff * sinc(cutoff * x) * window;
            acc += w * wave.samples[i as usize];
            wsum += w;
        }
        out.push(if wsum != 0.0 { acc / wsum } else { 0.0 });
    }
    Waveform::new(out, target_rate)
}

/// Reads 16-bit PCM or 32-bit float WAV; multi-channel input is averaged to mono.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => CoreError::io(path, io),
        other => CoreError::schema("wav", format!("{}: {other}", path.display())),
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(CoreError::schema("wav", "zero channels"));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|s| s as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (format, bits) => {
            return Err(CoreError::schema(
                "wav",
                format!("unsupported sample format {format:?} with {bits} bits"),
            ))
        }
    };
    let mono = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    Waveform::new(mono, spec.sample_rate)
}

/// Writes mono 32-bit float WAV.
pub fn write_wav(wave: &Waveform, path: &Path) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut buf = std::io::Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut buf, spec)
            .map_err(|e| CoreError::schema("wav", e.to_string()))?;
        for &s in &wave.samples {
            writer
                .write_sample(s as f32)
                .map_err(|e| CoreError::schema("wav", e.to_string()))?;
        }
        writer.finalize().map_err(|e| CoreError::schema("wav", e.to_string()))?;
    }
    atomic_write(path, &buf.into_inner())
}
