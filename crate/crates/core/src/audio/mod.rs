//! Raw audio to per-video-frame log-mel windows.

mod mel;
mod wave;

pub use mel::{
    frame_windows, mel_centers, mel_filterbank, mel_spectrogram, stack_windows, AudioWindow, MelGram, HOP_LENGTH, HOP_SECONDS,
    LOG_FLOOR, N_FFT, N_MELS, WINDOW_ROWS,
};
pub use wave::{read_wav, resample, write_wav, Waveform, TARGET_RATE};
