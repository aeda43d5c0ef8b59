use std::collections::BTreeMap;

use anim3d_numerics::{AdamConfig, AdamState, Graph, NodeId, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::ClipRecord;
use super::losses::{loss_reg_graph, LossWeights};
use crate::audio::{frame_windows, mel_spectrogram, resample, N_MELS, TARGET_RATE, WINDOW_ROWS};
use crate::error::{CoreError, Result};
use crate::generator::{forward_graph, Bound, Checkpoint, GeneratorConfig, GeneratorWeights};
use crate::head::{lip_landmarks_2d_graph, FaceParams, HeadAsset, LandmarkRig, JOINT_JAW};

/// Two-stage schedule: stage 1 trains on the regression loss alone, stage 2
/// adds the mouth closure loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub batch1: usize,
    pub batch2: usize,
    pub lr: f64,
    pub lambda_reg: f64,
    pub lambda_mc: f64,
    pub lambda_pho: f64,
    pub lambda_emo: f64,
    /// Square the per-frame norms of the regression loss.
    pub squared_norms: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage1_steps: 5000,
            stage2_steps: 2000,
            batch1: 128,
            batch2: 16,
            lr: 1e-4,
            lambda_reg: 1.0,
            lambda_mc: 0.1,
            lambda_pho: 0.0,
            lambda_emo: 0.0,
            squared_norms: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            reg: self.lambda_reg,
            mc: self.lambda_mc,
            pho: self.lambda_pho,
            emo: self.lambda_emo,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_weights().validate()?;
        if self.batch1 == 0 || self.batch2 == 0 {
            return Err(CoreError::Config("batch sizes must be positive".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(CoreError::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// A clip turned into network inputs and targets.
#[derive(Clone, Debug)]
pub struct PreparedClip {
    pub n_frames: usize,
    /// `[n, 16, 80]`
    pub windows: Tensor,
    /// `[n, d_psi]`
    pub psi: Tensor,
    /// `[n, 3]`
    pub jaw: Tensor,
    pub frames: Vec<FaceParams>,
    /// `[n, 2, L]`
    pub lips: Option<Tensor>,
    pub style_id: usize,
}

pub fn prepare_clip(clip: &ClipRecord) -> Result<PreparedClip> {
    clip.validate()?;
    let n = clip.n_frames();
    let audio = resample(&clip.audio, TARGET_RATE)?;
    let mel = mel_spectrogram(&audio)?;
    let windows = frame_windows(&mel, clip.fps, n)?;
    let data = windows.iter().flat_map(|w| w.values.data().iter().copied()).collect();
    let d_psi = clip.frames[0].psi.len();
    let psi = clip.frames.iter().flat_map(|f| f.psi.iter().copied()).collect();
    let jaw = clip.frames.iter().flat_map(|f| f.joint_pose(JOINT_JAW)).collect();
    let lips = match &clip.gt_lip_2d {
        Some(lips) => {
            let l = lips.first().map_or(0, Vec::len);
            let mut t = Vec::with_capacity(n * 2 * l);
            for frame in lips {
                if frame.len() != l {
                    return Err(CoreError::invalid("lip2d", "frames have different landmark counts"));
                }
                t.extend(frame.iter().map(|p| p[0]));
                t.extend(frame.iter().map(|p| p[1]));
            }
            Some(Tensor::new(vec![n, 2, l], t)?)
        }
        None => None,
    };
    Ok(PreparedClip {
        n_frames: n,
        windows: Tensor::new(vec![n, WINDOW_ROWS, N_MELS], data)?,
        psi: Tensor::new(vec![n, d_psi], psi)?,
        jaw: Tensor::new(vec![n, 3], jaw)?,
        frames: clip.frames.clone(),
        lips,
        style_id: clip.style_id,
    })
}

/// A batch of `B` segments of `T` frames.
pub struct Batch {
    pub windows: Tensor,
    pub psi: Tensor,
    pub jaw: Tensor,
    pub frames: Vec<FaceParams>,
    pub lips: Option<Tensor>,
    pub styles: Vec<usize>,
}

fn rows(t: &Tensor, start: usize, len: usize) -> &[f64] {
    let w: usize = t.shape()[1..].iter().product();
    &t.data()[start * w..(start + len) * w]
}

/// Gathers `(clip index, first frame)` segments of length `t`.
pub fn make_batch(clips: &[PreparedClip], picks: &[(usize, usize)], t: usize) -> Result<Batch> {
    let b = picks.len();
    let mut windows = Vec::new();
    let mut psi = Vec::new();
    let mut jaw = Vec::new();
    let mut frames = Vec::with_capacity(b * t);
    let mut lips = Some(Vec::new());
    let mut styles = Vec::with_capacity(b);
    let mut lip_count = None;
    for &(c, start) in picks {
        let clip = &clips[c];
        if start + t > clip.n_frames {
            return Err(CoreError::arg(format!("segment {start}..{} exceeds clip of {} frames", start + t, clip.n_frames)));
        }
        windows.extend_from_slice(rows(&clip.windows, start, t));
        psi.extend_from_slice(rows(&clip.psi, start, t));
        jaw.extend_from_slice(rows(&clip.jaw, start, t));
        frames.extend_from_slice(&clip.frames[start..start + t]);
        styles.push(clip.style_id);
        match (&mut lips, &clip.lips) {
            (Some(acc), Some(l)) => {
                acc.extend_from_slice(rows(l, start, t));
                lip_count = Some(l.shape()[2]);
            }
            (slot, _) => *slot = None,
        }
    }
    let d_psi = clips[picks[0].0].psi.shape()[1];
    Ok(Batch {
        windows: Tensor::new(vec![b, t, WINDOW_ROWS, N_MELS], windows)?,
        psi: Tensor::new(vec![b, t, d_psi], psi)?,
        jaw: Tensor::new(vec![b, t, 3], jaw)?,
        frames,
        lips: match (lips, lip_count) {
            (Some(l), Some(n)) => Some(Tensor::new(vec![b * t, 2, n], l)?),
            _ => None,
        },
        styles,
    })
}

/// Loss nodes for one batch, each averaged over the batch's segments.
pub struct BatchLoss {
    pub total: NodeId,
    pub reg: f64,
    pub mc: f64,
}

pub fn batch_loss(
    g: &mut Graph,
    p: &Bound,
    cfg: &GeneratorConfig,
    batch: &Batch,
    weights: &LossWeights,
    rig: Option<&LandmarkRig>,
    squared: bool,
) -> Result<BatchLoss> {
    weights.validate()?;
    let b = batch.styles.len() as f64;
    let out = forward_graph(g, p, cfg, &batch.windows, &batch.styles)?;
    let psi_gt = g.constant(batch.psi.clone());
    let jaw_gt = g.constant(batch.jaw.clone());
    let reg = loss_reg_graph(g, out.psi, psi_gt, out.jaw, jaw_gt, squared)?;
    let reg = g.scale(reg, 1.0 / b)?;
    let reg_value = g.value(reg).item();
    let mut total = g.scale(reg, weights.reg)?;
    let mut mc_value = 0.0;
    if weights.mc > 0.0 {
        let rig = rig.ok_or_else(|| CoreError::Config("mouth closure loss needs the head asset".into()))?;
        let lips = batch
            .lips
            .as_ref()
            .ok_or_else(|| CoreError::Config("mouth closure loss needs ground-truth lip landmarks".into()))?;
        let n = batch.frames.len();
        let psi = g.reshape(out.psi, &[n, cfg.d_psi])?;
        let jaw = g.reshape(out.jaw, &[n, 3])?;
        let pred = lip_landmarks_2d_graph(g, rig, psi, jaw, &batch.frames)?;
        let gt = g.constant(lips.clone());
        let diff = g.sub(pred, gt)?;
        let mc = g.l1(diff)?;
        let mc = g.scale(mc, 1.0 / b)?;
        mc_value = g.value(mc).item();
        let weighted = g.scale(mc, weights.mc)?;
        total = g.add(total, weighted)?;
    }
    Ok(BatchLoss {
        total,
        reg: reg_value,
        mc: mc_value,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub stage: u8,
    pub total: f64,
    pub reg: f64,
    pub mc: f64,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<StepRecord>,
}

/// Computes gradients of `total` for every bound parameter that has one.
pub fn collect_gradients(g: &Graph, p: &Bound, total: NodeId) -> Result<BTreeMap<String, Tensor>> {
    let mut grads = g.backward(total)?;
    Ok(p.ids()
        .iter()
        .filter_map(|(name, id)| grads.take(*id).map(|t| (name.clone(), t)))
        .collect())
}

fn check_dataset(gen: &GeneratorConfig, clips: &[PreparedClip], asset: &HeadAsset) -> Result<()> {
    if clips.is_empty() {
        return Err(CoreError::arg("training needs at least one clip"));
    }
    for (i, c) in clips.iter().enumerate() {
        if c.n_frames < gen.t_len {
            return Err(CoreError::arg(format!(
                "clip {i} has {} frames, fewer than the segment length {}",
                c.n_frames, gen.t_len
            )));
        }
        if c.psi.shape()[1] != gen.d_psi || asset.d_psi() != gen.d_psi {
            return Err(CoreError::arg(format!(
                "expression dimension mismatch: clip {i} has {}, generator {}, asset {}",
                c.psi.shape()[1],
                gen.d_psi,
                asset.d_psi()
            )));
        }
        if c.style_id >= gen.n_styles {
            return Err(CoreError::arg(format!(
                "clip {i} has style {} but the generator has {} styles",
                c.style_id, gen.n_styles
            )));
        }
    }
    Ok(())
}

/// Trains from a fresh initialization. See [`train_from`].
pub fn train(
    config: &TrainConfig,
    gen: &GeneratorConfig,
    dataset: &[ClipRecord],
    asset: &HeadAsset,
) -> Result<TrainOutcome> {
    let clips = dataset.iter().map(prepare_clip).collect::<Result<Vec<_>>>()?;
    train_from(config, GeneratorWeights::init(gen)?, &clips, asset)
}

/// Runs both stages from `weights`, sampling random contiguous segments with
/// a generator seeded from `config.seed`.
pub fn train_from(
    config: &TrainConfig,
    mut weights: GeneratorWeights,
    clips: &[PreparedClip],
    asset: &HeadAsset,
) -> Result<TrainOutcome> {
    config.validate()?;
    let gen = weights.config.clone();
    check_dataset(&gen, clips, asset)?;
    let lw = config.loss_weights();
    let needs_lips = config.stage2_steps > 0 && lw.mc > 0.0;
    if needs_lips && clips.iter().any(|c| c.lips.is_none()) {
        return Err(CoreError::Config("stage 2 needs ground-truth lip landmarks for every clip".into()));
    }
    let rig = needs_lips.then(|| LandmarkRig::new(asset));
    let mut adam = AdamState::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..clips.len()).collect();
    let mut history = Vec::with_capacity(config.stage1_steps + config.stage2_steps);
    let stages = [
        (1u8, config.stage1_steps, config.batch1, LossWeights { mc: 0.0, ..lw }),
        (2u8, config.stage2_steps, config.batch2, lw),
    ];
    for (stage, steps, batch_size, stage_weights) in stages {
        if steps == 0 {
            continue;
        }
        let b = batch_size.min(clips.len());
        if b < batch_size {
            log::warn!("stage {stage}: batch size {batch_size} clamped to {b} clips");
        }
        for _ in 0..steps {
            order.shuffle(&mut rng);
            let picks: Vec<(usize, usize)> = order[..b]
                .iter()
                .map(|&c| (c, rng.random_range(0..=clips[c].n_frames - gen.t_len)))
                .collect();
            let batch = make_batch(clips, &picks, gen.t_len)?;
            let mut g = Graph::new();
            let p = weights.bind(&mut g, true);
            let loss = batch_loss(&mut g, &p, &gen, &batch, &stage_weights, rig.as_ref(), config.squared_norms)?;
            let record = StepRecord {
                step: history.len(),
                stage,
                total: g.value(loss.total).item(),
                reg: loss.reg,
                mc: loss.mc,
            };
            let grads = collect_gradients(&g, &p, loss.total)?;
            drop(g);
            adam.step(&mut weights.params, &grads)?;
            if record.step % 100 == 0 {
                log::info!(
                    "step {} stage {stage}: total {:.6} reg {:.6} mc {:.6}",
                    record.step,
                    record.total,
                    record.reg,
                    record.mc
                );
            }
            history.push(record);
        }
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            weights,
            adam: Some(adam),
        },
        history,
    })
}

/// Mean regression loss per segment over every non-overlapping segment of
/// every clip, without sampling.
pub fn evaluate_reg(weights: &GeneratorWeights, clips: &[PreparedClip], squared: bool) -> Result<f64> {
    let t = weights.config.t_len;
    let picks: Vec<(usize, usize)> = clips
        .iter()
        .enumerate()
        .flat_map(|(c, clip)| (0..clip.n_frames / t).map(move |k| (c, k * t)))
        .collect();
    if picks.is_empty() {
        return Err(CoreError::arg("no complete segments to evaluate"));
    }
    let batch = make_batch(clips, &picks, t)?;
    let mut g = Graph::new();
    let p = weights.bind(&mut g, false);
    let weights_reg_only = LossWeights {
        reg: 1.0,
        mc: 0.0,
        ..LossWeights::default()
    };
    let loss = batch_loss(&mut g, &p, &weights.config, &batch, &weights_reg_only, None, squared)?;
    Ok(loss.reg)
}
