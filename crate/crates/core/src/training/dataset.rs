//! Clip records and their on-disk layout:
//!
//! ```text
//! <data>/<clip_id>/manifest.json   {"fps", "style_id", "identity_id", "clip_id", "n_frames"}
//! <data>/<clip_id>/params.bin      per-frame parameter container
//! <data>/<clip_id>/audio.wav       16-bit PCM or 32-bit float WAV
//! <data>/<clip_id>/lip2d.bin       optional [T, L, 2] landmarks
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, write_wav, Waveform};
use crate::container::atomic_write;
use crate::error::{CoreError, Result};
use crate::head::FaceParams;
use crate::params_io::{load_lips, save_lips, ParamSequence};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";
pub const AUDIO_FILE: &str = "audio.wav";
pub const LIPS_FILE: &str = "lip2d.bin";

#[derive(Clone, Debug, PartialEq)]
pub struct ClipRecord {
    pub clip_id: String,
    pub fps: f64,
    pub frames: Vec<FaceParams>,
    pub audio: Waveform,
    /// Per frame, one `[x, y]` per lip landmark.
    pub gt_lip_2d: Option<Vec<Vec<[f64; 2]>>>,
    pub style_id: usize,
    pub identity_id: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub fps: f64,
    pub style_id: usize,
    pub identity_id: usize,
    pub clip_id: String,
    pub n_frames: usize,
}

impl ClipRecord {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn validate(&self) -> Result<()> {
        ParamSequence {
            fps: self.fps,
            frames: self.frames.clone(),
        }
        .validate()?;
        if let Some(lips) = &self.gt_lip_2d {
            if lips.len() != self.frames.len() {
                return Err(CoreError::invalid(
                    "lip2d",
                    format!("{} landmark frames for {} parameter frames", lips.len(), self.frames.len()),
                ));
            }
        }
        Ok(())
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            fps: self.fps,
            style_id: self.style_id,
            identity_id: self.identity_id,
            clip_id: self.clip_id.clone(),
            n_frames: self.frames.len(),
        }
    }

    /// Writes the clip into `dir/<clip_id>/`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let clip_dir = dir.join(&self.clip_id);
        fs::create_dir_all(&clip_dir).map_err(|e| CoreError::io(&clip_dir, e))?;
        let manifest = serde_json::to_vec_pretty(&self.manifest()).expect("manifest serializes");
        atomic_write(&clip_dir.join(MANIFEST_FILE), &manifest)?;
        ParamSequence {
            fps: self.fps,
            frames: self.frames.clone(),
        }
        .save(&clip_dir.join(PARAMS_FILE))?;
        write_wav(&self.audio, &clip_dir.join(AUDIO_FILE))?;
        if let Some(lips) = &self.gt_lip_2d {
            save_lips(&clip_dir.join(LIPS_FILE), lips)?;
        }
        Ok(clip_dir)
    }

    /// Reads and validates one clip directory.
    pub fn load(clip_dir: &Path) -> Result<Self> {
        let path = clip_dir.join(MANIFEST_FILE);
        let text = fs::read(&path).map_err(|e| CoreError::io(&path, e))?;
        let manifest: Manifest = serde_json::from_slice(&text)
            .map_err(|e| CoreError::schema(format!("{}", path.display()), e.to_string()))?;
        let with_path = |p: &Path, e: CoreError| match e {
            CoreError::Io { .. } => e,
            other => CoreError::invalid(p.display().to_string(), other.to_string()),
        };
        let params_path = clip_dir.join(PARAMS_FILE);
        let seq = ParamSequence::load(&params_path).map_err(|e| with_path(&params_path, e))?;
        let audio_path = clip_dir.join(AUDIO_FILE);
        let audio = read_wav(&audio_path).map_err(|e| with_path(&audio_path, e))?;
        let lips_path = clip_dir.join(LIPS_FILE);
        let gt_lip_2d = if lips_path.exists() {
            Some(load_lips(&lips_path).map_err(|e| with_path(&lips_path, e))?)
        } else {
            None
        };
        if manifest.n_frames != seq.frames.len() {
            return Err(CoreError::invalid(
                format!("{}: n_frames", path.display()),
                format!("manifest says {}, params file has {}", manifest.n_frames, seq.frames.len()),
            ));
        }
        if manifest.fps != seq.fps {
            return Err(CoreError::invalid(
                format!("{}: fps", path.display()),
                format!("manifest says {}, params file says {}", manifest.fps, seq.fps),
            ));
        }
        let clip = ClipRecord {
            clip_id: manifest.clip_id,
            fps: seq.fps,
            frames: seq.frames,
            audio,
            gt_lip_2d,
            style_id: manifest.style_id,
            identity_id: manifest.identity_id,
        };
        clip.validate().map_err(|e| with_path(clip_dir, e))?;
        Ok(clip)
    }
}

/// Clip directories under `dir` (those containing a manifest), sorted by name.
pub fn clip_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CoreError::io(dir, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CoreError::io(dir, e))?.path();
        if path.join(MANIFEST_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Loads every clip under `dir`; an empty directory is an error.
pub fn load_dataset(dir: &Path) -> Result<Vec<ClipRecord>> {
    let dirs = clip_dirs(dir)?;
    if dirs.is_empty() {
        return Err(CoreError::invalid(dir.display().to_string(), "no clip directories found"));
    }
    dirs.iter().map(|d| ClipRecord::load(d)).collect()
}

pub fn save_dataset(dir: &Path, clips: &[ClipRecord]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    for c in clips {
        c.save(dir)?;
    }
    Ok(())
}
