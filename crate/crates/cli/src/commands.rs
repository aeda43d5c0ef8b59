use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anim3d_core::audio::read_wav;
use anim3d_core::container::atomic_write;
use anim3d_core::emotion::{
    apply_emotion, extract_template, make_weight, read_label_sidecar, EmotionLabel, EmotionTemplate, LabeledClip,
    INTENSITY_STRONG, INTENSITY_SUBTLE,
};
use anim3d_core::error::{CoreError, Result};
use anim3d_core::evaluation::{smooth_params, FrameNorm, MetricReport, SmootherConfig};
use anim3d_core::generator::{Checkpoint, GeneratorConfig, StyleCode};
use anim3d_core::head::{export_obj, generate_toy_asset, HeadAsset};
use anim3d_core::params_io::ParamSequence;
use anim3d_core::pipeline::animate;
use anim3d_core::training::{
    clip_dirs, load_dataset, make_synthetic_dataset, save_dataset, train, ClipRecord, StepRecord, TrainConfig,
};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::{overlay, PipelineConfig};

#[derive(Debug, Parser)]
#[command(name = "anim3d", version, about = "Audio-driven 3D face animation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a procedurally generated head asset.
    ToyAsset(ToyAssetArgs),
    /// Write a synthetic training dataset.
    SynthData(SynthDataArgs),
    /// Check every file of a dataset.
    Validate(ValidateArgs),
    /// Kalman-smooth every channel of a parameter file.
    Smooth(SmoothArgs),
    /// Train a generator; writes a checkpoint and a loss-history CSV.
    Train(TrainArgs),
    /// Animate a head from a WAV file.
    Animate(AnimateArgs),
    /// Add an emotion template to the expression codes of a parameter file.
    Emotion(EmotionArgs),
    /// Average the codes of labeled frames into an emotion template.
    ExtractTemplate(ExtractTemplateArgs),
    /// Compare predicted and ground-truth parameter files on the mesh.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// TOML pipeline config; its keys override flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ToyAssetArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 32)]
    pub vertices: usize,
    #[arg(long, default_value_t = 4)]
    pub shape_dims: usize,
    #[arg(long, default_value_t = 10)]
    pub expr_dims: usize,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct SynthDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 8)]
    pub clips: usize,
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
    /// Head asset used for ground-truth lips; a toy asset is generated and
    /// written to `<out>/asset.bin` when absent.
    #[arg(long)]
    pub asset: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Also check dimensions against this asset (default `<data>/asset.bin` if present).
    #[arg(long)]
    pub asset: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SmoothArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long)]
    pub r: Option<f64>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to `<data>/asset.bin`.
    #[arg(long)]
    pub asset: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Start from the small test-sized network instead of the full one.
    #[arg(long)]
    pub tiny: bool,
    #[arg(long)]
    pub stage1_steps: Option<usize>,
    #[arg(long)]
    pub stage2_steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct AnimateArgs {
    #[arg(long)]
    pub audio: PathBuf,
    /// Parameter file whose first frame supplies identity, neck/eye pose,
    /// albedo and lighting.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub style: usize,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Text file with one `scale tx ty` line per frame.
    #[arg(long)]
    pub cameras: Option<PathBuf>,
    #[arg(long)]
    pub asset: Option<PathBuf>,
    #[arg(long, default_value_t = 25.0)]
    pub fps: f64,
    /// Frames shared by consecutive segments, blended with a linear
    /// crossfade. 0 keeps segments disjoint.
    #[arg(long, default_value_t = 0)]
    pub overlap: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct EmotionArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub template: PathBuf,
    /// A number in [0, 1], or `subtle` (0.4) or `strong` (0.8).
    #[arg(long, value_parser = parse_intensity)]
    pub intensity: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractTemplateArgs {
    /// Parameter files, one per clip.
    #[arg(long, num_args = 1.., required = true)]
    pub params: Vec<PathBuf>,
    /// JSON label sidecars, one per parameter file, in the same order.
    #[arg(long, num_args = 1.., required = true)]
    pub labels: Vec<PathBuf>,
    #[arg(long)]
    pub emotion: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub asset: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Average per-vertex distances instead of the stacked-coordinate norm.
    #[arg(long)]
    pub per_vertex_mean: bool,
    #[command(flatten)]
    pub config: ConfigArg,
}

pub fn parse_intensity(s: &str) -> std::result::Result<f64, String> {
    let v = match s {
        "subtle" => INTENSITY_SUBTLE,
        "strong" => INTENSITY_STRONG,
        _ => s.parse::<f64>().map_err(|e| format!("{s}: {e}"))?,
    };
    if !(0.0..=1.0).contains(&v) {
        return Err(format!("intensity {v} is outside [0, 1]"));
    }
    Ok(v)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct MetricFlags {
    frame_norm: FrameNorm,
}

pub const ASSET_FILE: &str = "asset.bin";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const HISTORY_FILE: &str = "loss_history.csv";
pub const PARAMS_OUT: &str = "params.bin";
pub const FRAMES_DIR: &str = "frames";

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::ToyAsset(a) => toy_asset(a),
        Command::SynthData(a) => synth_data(a),
        Command::Validate(a) => validate(a),
        Command::Smooth(a) => smooth(a),
        Command::Train(a) => train_cmd(a),
        Command::Animate(a) => animate_cmd(a),
        Command::Emotion(a) => emotion(a),
        Command::ExtractTemplate(a) => extract(a),
        Command::Evaluate(a) => evaluate(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))
}

fn toy_asset(a: ToyAssetArgs) -> Result<()> {
    let cfg = PipelineConfig::load_opt(a.config.config.as_deref())?;
    let asset = generate_toy_asset(cfg.seed(a.seed)?, a.vertices, a.shape_dims, a.expr_dims)?;
    asset.save(&a.out)?;
    println!("wrote asset with {} vertices to {}", asset.n_vertices(), a.out.display());
    Ok(())
}

fn synth_data(a: SynthDataArgs) -> Result<()> {
    let cfg = PipelineConfig::load_opt(a.config.config.as_deref())?;
    let seed = cfg.seed(a.seed)?;
    let out = cfg.output_dir(a.out);
    create_dir(&out)?;
    let asset = match cfg.asset(a.asset) {
        Some(path) => HeadAsset::load(&path)?,
        None => {
            let asset = generate_toy_asset(seed, 32, 4, 10)?;
            asset.save(&out.join(ASSET_FILE))?;
            asset
        }
    };
    let clips = make_synthetic_dataset(seed, a.clips, a.frames, &asset)?;
    save_dataset(&out, &clips)?;
    println!("wrote {} clips to {}", clips.len(), out.display());
    Ok(())
}

fn default_asset(flag: Option<PathBuf>, data: &Path) -> Option<PathBuf> {
    flag.or_else(|| Some(data.join(ASSET_FILE)).filter(|p| p.is_file()))
}

fn validate(a: ValidateArgs) -> Result<()> {
    let asset = default_asset(a.asset, &a.data).map(|p| HeadAsset::load(&p)).transpose()?;
    let dirs = clip_dirs(&a.data)?;
    if dirs.is_empty() {
        return Err(CoreError::invalid(a.data.display().to_string(), "no clip directories found"));
    }
    for dir in &dirs {
        let in_clip = |e: CoreError| match e {
            CoreError::Validation { field, msg } | CoreError::Schema { field, msg } => {
                CoreError::invalid(format!("{}: {field}", dir.display()), msg)
            }
            other => other,
        };
        let clip = ClipRecord::load(dir).map_err(in_clip)?;
        if let Some(asset) = &asset {
            check_clip_against_asset(&clip, asset).map_err(in_clip)?;
        }
    }
    println!("ok: {} clips", dirs.len());
    Ok(())
}

fn check_clip_against_asset(clip: &ClipRecord, asset: &HeadAsset) -> Result<()> {
    let f = &clip.frames[0];
    if f.beta.len() != asset.d_beta() {
        return Err(CoreError::invalid("beta", format!("{} dims, asset has {}", f.beta.len(), asset.d_beta())));
    }
    if f.psi.len() != asset.d_psi() {
        return Err(CoreError::invalid("psi", format!("{} dims, asset has {}", f.psi.len(), asset.d_psi())));
    }
    if let Some(lips) = &clip.gt_lip_2d {
        let l = asset.lip_landmarks().len();
        if let Some(i) = lips.iter().position(|frame| frame.len() != l) {
            return Err(CoreError::invalid("lip2d", format!("frame {i} does not have {l} landmarks")));
        }
    }
    Ok(())
}

fn smooth(a: SmoothArgs) -> Result<()> {
    let cfg = PipelineConfig::load_opt(a.config.config.as_deref())?;
    let mut base = SmootherConfig::default();
    if let Some(q) = a.q {
        base.q = q;
    }
    if let Some(r) = a.r {
        base.r = r;
    }
    let smoother: SmootherConfig = overlay(&base, cfg.smoother.as_ref(), "smoother")?;
    smoother.validate().map_err(|e| CoreError::Config(e.to_string()))?;
    let params = ParamSequence::load(&a.input)?;
    let smoothed = smooth_params(&params, &smoother)?;
    smoothed.save(&a.out)?;
    println!("smoothed {} frames into {}", smoothed.frames.len(), a.out.display());
    Ok(())
}

fn history_csv(history: &[StepRecord]) -> String {
    let mut s = String::from("step,stage,total,reg,mc\n");
    for r in history {
        s.push_str(&format!("{},{},{},{},{}\n", r.step, r.stage, r.total, r.reg, r.mc));
    }
    s
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = PipelineConfig::load_opt(a.config.config.as_deref())?;
    let seed = cfg.seed(a.seed)?;
    let out = cfg.output_dir(a.out);
    let asset_path = default_asset(cfg.asset(a.asset), &a.data)
        .ok_or_else(|| CoreError::arg(format!("no --asset given and no {ASSET_FILE} in {}", a.data.display())))?;
    let asset = HeadAsset::load(&asset_path)?;
    let clips = load_dataset(&a.data)?;

    let mut gen = if a.tiny { GeneratorConfig::tiny() } else { GeneratorConfig::default() };
    gen.d_psi = asset.d_psi();
    let max_style = clips.iter().map(|c| c.style_id).max().unwrap_or(0);
    gen.n_styles = gen.n_styles.max(max_style + 1);
    let mut gen: GeneratorConfig = overlay(&gen, cfg.generator.as_ref(), "generator")?;
    gen.seed = seed;
    gen.validate()?;

    let mut base = TrainConfig::default();
    if let Some(s) = a.stage1_steps {
        base.stage1_steps = s;
    }
    if let Some(s) = a.stage2_steps {
        base.stage2_steps = s;
    }
    if let Some(lr) = a.lr {
        base.lr = lr;
    }
    let mut train_cfg: TrainConfig = overlay(&base, cfg.train.as_ref(), "train")?;
    train_cfg.seed = seed;

    let outcome = train(&train_cfg, &gen, &clips, &asset)?;
    create_dir(&out)?;
    outcome.checkpoint.save(&out.join(CHECKPOINT_FILE))?;
    atomic_write(&out.join(HISTORY_FILE), history_csv(&outcome.history).as_bytes())?;
    if let (Some(first), Some(last)) = (outcome.history.first(), outcome.history.last()) {
        println!(
            "trained {} steps: loss {:.6} -> {:.6}; wrote {}",
            outcome.history.len(),
            first.total,
            last.total,
            out.display()
        );
    }
    Ok(())
}

fn read_cameras(path: &Path) -> Result<Vec<[f64; 3]>> {
    let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            let v: Vec<f64> = l
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| CoreError::schema("cameras", format!("{} line {}: {e}", path.display(), i + 1)))?;
            match v.as_slice() {
                [s, tx, ty] if *s > 0.0 => Ok([*s, *tx, *ty]),
                _ => Err(CoreError::schema(
                    "cameras",
                    format!("{} line {}: expected `scale tx ty` with scale > 0", path.display(), i + 1),
                )),
            }
        })
        .collect()
}

fn animate_cmd(a: AnimateArgs) -> Result<()> {
    let cfg = PipelineConfig::load_opt(a.config.config.as_deref())?;
    let out = cfg.output_dir(a.out);
    let checkpoint = Checkpoint::load(&a.checkpoint)?;
    let weights = checkpoint.weights;
    let style = StyleCode::new(a.style, weights.config.n_styles)?;
    let reference = ParamSequence::load(&a.reference)?;
    let audio = read_wav(&a.audio)?;
    let cameras = a.cameras.as_deref().map(read_cameras).transpose()?;
    let asset = cfg
        .asset(a.asset)
        .map(|p| HeadAsset::load(&p))
        .transpose()?
        .ok_or_else(|| CoreError::arg("animate needs --asset to write meshes"))?;
    let frames = animate(&weights, &audio, &reference.frames[0], &style, a.fps, cameras.as_deref(), a.overlap)?;
    let seq = ParamSequence { fps: a.fps, frames };
    let frames_dir = out.join(FRAMES_DIR);
    create_dir(&frames_dir)?;
    seq.save(&out.join(PARAMS_OUT))?;
    for (i, f) in seq.frames.iter().enumerate() {
        export_obj(&f.mesh(&asset)?, &frames_dir.join(format!("frame_{i:05}.obj")))?;
    }
    println!("wrote {} frames to {}", seq.frames.len(), out.display());
    Ok(())
}

fn emotion(a: EmotionArgs) -> Result<()> {
    let template = EmotionTemplate::load(&a.template)?;
    let mut params = ParamSequence::load(&a.input)?;
    let d = params.frames[0].psi.len();
    let w = make_weight(a.intensity, d)?;
    for f in params.frames.iter_mut() {
        f.psi = apply_emotion(&f.psi, &template, &w)?;
    }
    params.save(&a.out)?;
    println!(
        "applied {} at intensity {} to {} frames",
        template.label,
        a.intensity,
        params.frames.len()
    );
    Ok(())
}

fn extract(a: ExtractTemplateArgs) -> Result<()> {
    if a.params.len() != a.labels.len() {
        return Err(CoreError::Config(format!(
            "{} parameter files but {} label files",
            a.params.len(),
            a.labels.len()
        )));
    }
    let target: EmotionLabel = a.emotion.parse().map_err(|e: CoreError| CoreError::Config(e.to_string()))?;
    let clips = a
        .params
        .iter()
        .zip(&a.labels)
        .map(|(p, l)| {
            Ok(LabeledClip {
                psi: ParamSequence::load(p)?.group("psi")?,
                labels: read_label_sidecar(l)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let template = extract_template(&clips, target)?;
    template.save(&a.out)?;
    println!("{} template from {} frames", template.label, template.n_valid_frames);
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let cfg = PipelineConfig::load_opt(a.config.config.as_deref())?;
    let asset = cfg
        .asset(a.asset)
        .map(|p| HeadAsset::load(&p))
        .transpose()?
        .ok_or_else(|| CoreError::arg("evaluate needs --asset"))?;
    let base = MetricFlags {
        frame_norm: if a.per_vertex_mean { FrameNorm::PerVertexMean } else { FrameNorm::Stacked },
    };
    let flags: MetricFlags = overlay(&base, cfg.metrics.as_ref(), "metrics")?;
    let pred = ParamSequence::load(&a.pred)?;
    let gt = ParamSequence::load(&a.gt)?;
    let mut report = MetricReport::from_params(&asset, &pred.frames, &gt.frames, flags.frame_norm)?;
    report.clip_id = a.pred.file_stem().map(|s| s.to_string_lossy().into_owned());
    atomic_write(&a.out, report.to_json().as_bytes())?;
    let mut stdout = std::io::stdout().lock();
    let _ = write!(stdout, "{}", report.to_table());
    Ok(())
}
