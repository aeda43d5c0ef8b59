//! Runs every acceptance criterion and prints one PASS/FAIL line for each.
//! Built without the libtest harness so the lines are never captured.

mod common;

use std::f64::consts::PI;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use anim3d_core::audio::{
    frame_windows, mel_spectrogram, AudioWindow, Waveform, HOP_LENGTH, LOG_FLOOR, N_FFT, N_MELS, TARGET_RATE,
    WINDOW_ROWS,
};
use anim3d_core::emotion::{apply_emotion, make_weight, EmotionLabel, EmotionTemplate, MASKED_DIMS};
use anim3d_core::evaluation::{smooth_track, FrameNorm, MetricReport, SmootherConfig};
use anim3d_core::generator::{assemble_animation, GeneratorConfig, GeneratorWeights, StyleCode};
use anim3d_core::head::{evaluate_mesh, generate_toy_asset, HeadAsset, LandmarkRig, JOINT_JAW};
use anim3d_core::params_io::ParamSequence;
use anim3d_core::training::{
    batch_loss, evaluate_reg, make_batch, make_synthetic_dataset, prepare_clip, total_loss, train_from, LossWeights,
    PreparedClip, TrainConfig,
};
use anim3d_numerics::gradcheck::{max_relative_error, relative_error};
use anim3d_numerics::{Graph, NodeId, Tensor};
use common::{anim3d, obj_vertex_count, ok, s};
use nalgebra::{DMatrix, DVector, Matrix2, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Criterion = fn() -> String;

fn main() {
    let criteria: [(u32, &str, Duration, Criterion); 10] = [
        (1, "mesh identity", Duration::from_secs(1), mesh_identity),
        (2, "autodiff soundness", Duration::from_secs(120), autodiff_soundness),
        (3, "attention normalization", Duration::from_secs(60), attention_normalization),
        (4, "audio frontend", Duration::from_secs(60), audio_frontend),
        (5, "metric oracle equivalence", Duration::from_secs(60), metric_oracles),
        (6, "overfit convergence", Duration::from_secs(300), overfit_convergence),
        (7, "loss weights", Duration::from_secs(60), loss_weights),
        (8, "emotion masking", Duration::from_secs(60), emotion_masking),
        (9, "kalman smoother", Duration::from_secs(60), kalman_smoother),
        (10, "end-to-end cli", Duration::from_secs(600), end_to_end_cli),
    ];
    let only: Option<u32> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    // Failures are reported on the criterion line, not by the default hook.
    panic::set_hook(Box::new(|_| {}));
    let mut failed = Vec::new();
    let mut lines = Vec::new();
    for (n, name, budget, run) in criteria {
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(run));
        let elapsed = start.elapsed();
        let (verdict, detail) = match result {
            Ok(detail) if elapsed <= budget => ("PASS", detail),
            Ok(detail) => ("FAIL", format!("{detail}; over the {:.0} s budget", budget.as_secs_f64())),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|m| m.to_string()))
                    .unwrap_or_else(|| "panicked".into());
                ("FAIL", msg)
            }
        };
        if verdict == "FAIL" {
            failed.push(n);
        }
        let line = format!("acceptance {n:>2} {verdict} {name} [{:.2} s]: {detail}", elapsed.as_secs_f64());
        println!("{line}");
        lines.push(line);
    }
    println!();
    for line in &lines {
        println!("{line}");
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

fn toy_or_large(n_v: usize) -> HeadAsset {
    generate_toy_asset(0, n_v, if n_v > 100 { 100 } else { 4 }, if n_v > 100 { 50 } else { 10 }).unwrap()
}

fn mesh_identity() -> String {
    let tmp = tempfile::tempdir().unwrap();
    // Stand-in for a converted asset: a full-size mesh written to and read
    // back from the binary asset format.
    let path = tmp.path().join("converted.bin");
    toy_or_large(5023).save(&path).unwrap();
    let assets = [("toy", toy_or_large(32)), ("converted", HeadAsset::load(&path).unwrap())];
    let mut worst = 0.0f64;
    for (name, asset) in &assets {
        let zero = evaluate_mesh(asset, &vec![0.0; asset.d_beta()], &[0.0; 15], &vec![0.0; asset.d_psi()]).unwrap();
        assert!(zero.vertices.data() == asset.template().data(), "{name}: zero parameters differ from template");

        for angle in [0.05, 0.3, -0.2] {
            let mut theta = [0.0; 15];
            theta[3 * JOINT_JAW] = angle;
            theta[3 * JOINT_JAW + 2] = 0.5 * angle;
            let mesh = evaluate_mesh(asset, &vec![0.0; asset.d_beta()], &theta, &vec![0.0; asset.d_psi()]).unwrap();
            let template = |v: usize| Vector3::from(asset.template_vertex(v));
            let joint: Vector3<f64> = asset
                .joint_regressor()
                .row(JOINT_JAW)
                .iter()
                .enumerate()
                .map(|(v, w)| *w * template(v))
                .sum();
            let axis = Vector3::new(angle, 0.0, 0.5 * angle);
            let rot = Rotation3::new(axis);
            for &v in asset.jaw_region() {
                let expected = rot * (template(v) - joint) + joint;
                let got = Vector3::from(mesh.vertex(v));
                worst = worst.max((got - expected).amax());
            }
        }
    }
    assert!(worst < 1e-10, "jaw rotation deviates from the rigid oracle by {worst:e}");
    format!("template reproduced bit-exactly on 32- and 5023-vertex assets; jaw oracle max deviation {worst:.1e}")
}

const H: f64 = 1e-4;
const TOL: f64 = 1e-3;

fn op_error<B>(inputs: Vec<Tensor>, seed: u64, build: B) -> f64
where
    B: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let probe = {
        let mut g = Graph::new();
        let ids: Vec<_> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &ids);
        Tensor::randn(g.shape(out).to_vec(), 1.0, &mut rng)
    };
    let eval = |xs: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<_> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &ids);
        g.value(out).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    };
    let mut g = Graph::new();
    let ids: Vec<_> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &ids);
    let p = g.constant(probe.clone());
    let prod = g.mul(out, p).unwrap();
    let loss = g.sum(prod).unwrap();
    let grads = g.backward(loss).unwrap();
    let analytic: Vec<Tensor> = ids
        .iter()
        .zip(&inputs)
        .map(|(id, t)| grads.get(*id).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect();
    max_relative_error(eval, &inputs, &analytic, H)
}

fn away_from_zero(shape: Vec<usize>, r: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, 1.0, r).map(|x| if x >= 0.0 { x + 0.1 } else { x - 0.1 })
}

fn every_op_error(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut d = |lo: usize| r.random_range(lo..lo + 4);
    let (a, b, c, k) = (d(1), d(2), d(1), d(1));
    let mut r = ChaCha8Rng::seed_from_u64(seed + 100);
    let x3 = Tensor::randn(vec![a, b, c], 1.0, &mut r);
    let y3 = Tensor::randn(vec![a, b, c], 1.0, &mut r);
    let m = Tensor::randn(vec![b, k], 1.0, &mut r);
    let m2 = Tensor::randn(vec![k, c], 1.0, &mut r);
    let bm = Tensor::randn(vec![a, c, k], 1.0, &mut r);
    let bias = Tensor::randn(vec![k], 1.0, &mut r);
    let kinked = away_from_zero(vec![a, b], &mut r);
    let gamma = Tensor::randn(vec![c], 1.0, &mut r);
    let beta = Tensor::randn(vec![c], 1.0, &mut r);
    let ids: Vec<usize> = (0..5).map(|_| r.random_range(0..b)).collect();
    let img = Tensor::randn(vec![2, 2, 5, 7], 1.0, &mut r);
    let ker = Tensor::randn(vec![3, 2, 3, 3], 0.5, &mut r);
    let cb = Tensor::randn(vec![3], 1.0, &mut r);
    let seq = Tensor::randn(vec![2, 2, 8], 1.0, &mut r);
    let ker1 = Tensor::randn(vec![3, 2, 3], 0.5, &mut r);
    let mut rot = Tensor::randn(vec![3, 3], 0.8, &mut r);
    rot.data_mut()[0..3].copy_from_slice(&[2e-3, -1e-3, 4e-3]);
    let mut out = vec![
        ("matmul", op_error(vec![m.clone(), m2.clone()], seed, |g, v| g.matmul(v[0], v[1]).unwrap())),
        ("bmm", op_error(vec![x3.clone(), bm], seed, |g, v| g.bmm(v[0], v[1]).unwrap())),
        ("add", op_error(vec![x3.clone(), y3.clone()], seed, |g, v| g.add(v[0], v[1]).unwrap())),
        ("sub", op_error(vec![x3.clone(), y3.clone()], seed, |g, v| g.sub(v[0], v[1]).unwrap())),
        ("mul", op_error(vec![x3.clone(), y3.clone()], seed, |g, v| g.mul(v[0], v[1]).unwrap())),
        ("scale", op_error(vec![x3.clone()], seed, |g, v| g.scale(v[0], -1.3).unwrap())),
        ("relu", op_error(vec![kinked.clone()], seed, |g, v| g.relu(v[0]).unwrap())),
        ("leaky_relu", op_error(vec![kinked.clone()], seed, |g, v| g.leaky_relu(v[0], 0.2).unwrap())),
        ("tanh", op_error(vec![x3.clone()], seed, |g, v| g.tanh(v[0]).unwrap())),
        ("linear", op_error(vec![x3.clone(), Tensor::randn(vec![c, k], 1.0, &mut r), bias], seed, |g, v| {
            g.linear(v[0], v[1], Some(v[2])).unwrap()
        })),
        ("softmax", op_error(vec![x3.clone()], seed, |g, v| g.softmax(v[0], 2).unwrap())),
        ("layer_norm", op_error(vec![x3.clone(), gamma, beta], seed, |g, v| {
            g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap()
        })),
        ("embedding", op_error(vec![m.clone()], seed, move |g, v| g.embedding(v[0], &ids).unwrap())),
        ("reshape", op_error(vec![x3.clone()], seed, move |g, v| g.reshape(v[0], &[a * b, c]).unwrap())),
        ("concat", op_error(vec![x3.clone(), y3.clone()], seed, |g, v| g.concat(&[v[0], v[1]], 1).unwrap())),
        ("slice", op_error(vec![x3.clone()], seed, move |g, v| g.slice(v[0], 1, 1, b - 1).unwrap())),
        ("transpose", op_error(vec![x3.clone()], seed, |g, v| g.transpose(v[0]).unwrap())),
        ("repeat", op_error(vec![x3.clone()], seed, |g, v| g.repeat(v[0], 1, 3).unwrap())),
        ("sum", op_error(vec![x3.clone()], seed, |g, v| g.sum(v[0]).unwrap())),
        ("mean", op_error(vec![x3.clone()], seed, |g, v| g.mean(v[0]).unwrap())),
        ("l1", op_error(vec![kinked.clone()], seed, |g, v| g.l1(v[0]).unwrap())),
        ("sum_squares", op_error(vec![x3.clone()], seed, |g, v| g.sum_squares(v[0]).unwrap())),
        ("norm_last", op_error(vec![x3], seed, |g, v| g.norm_last(v[0]).unwrap())),
        ("conv2d", op_error(vec![img, ker, cb.clone()], seed, |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), (2, 3), (1, 1)).unwrap()
        })),
        ("conv1d", op_error(vec![seq, ker1, cb], seed, |g, v| g.conv1d(v[0], v[1], Some(v[2]), 2, 1).unwrap())),
        ("rodrigues", op_error(vec![rot], seed, |g, v| g.rodrigues(v[0]).unwrap())),
    ];
    out.sort_by(|x, y| y.1.total_cmp(&x.1));
    out
}

struct Composition {
    cfg: GeneratorConfig,
    asset: HeadAsset,
    clips: Vec<PreparedClip>,
    rig: LandmarkRig,
}

impl Composition {
    fn new(seed: u64) -> Self {
        let asset = generate_toy_asset(seed, 32, 4, 6).unwrap();
        let data = make_synthetic_dataset(seed, 2, 12, &asset).unwrap();
        let clips = data.iter().map(|c| prepare_clip(c).unwrap()).collect();
        let cfg = GeneratorConfig {
            t_len: 3,
            d_psi: 6,
            n_styles: 4,
            seed,
            ..GeneratorConfig::tiny()
        };
        let rig = LandmarkRig::new(&asset);
        Composition { cfg, asset, clips, rig }
    }

    /// Generator output through both regression and mouth-closure terms.
    fn loss(&self, w: &GeneratorWeights, trainable: bool) -> (Graph, anim3d_core::generator::Bound, NodeId) {
        let batch = make_batch(&self.clips, &[(0, 2), (1, 7)], self.cfg.t_len).unwrap();
        let mut g = Graph::new();
        let p = w.bind(&mut g, trainable);
        let l = batch_loss(&mut g, &p, &self.cfg, &batch, &LossWeights::default(), Some(&self.rig), false).unwrap();
        let _ = &self.asset;
        (g, p, l.total)
    }
}

fn autodiff_soundness() -> String {
    let mut worst_op = ("", 0.0f64);
    for seed in 0..5u64 {
        let errs = every_op_error(seed);
        assert!(errs.len() >= 26);
        if errs[0].1 > worst_op.1 {
            worst_op = errs[0];
        }
        assert!(errs[0].1 < TOL, "seed {seed}: {} relative error {:e}", errs[0].0, errs[0].1);
    }

    let mut worst = 0.0f64;
    let mut kinks = 0;
    let mut checked = 0;
    for seed in 0..5u64 {
        let comp = Composition::new(seed);
        let w = GeneratorWeights::init(&comp.cfg).unwrap();
        let (g, p, total) = comp.loss(&w, true);
        let grads = g.backward(total).unwrap();
        let names: Vec<&String> = w.params.keys().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut passed = 0;
        while passed < 20 {
            assert!(kinks <= 10, "too many samples straddle an activation kink");
            let name = names[rng.random_range(0..names.len())];
            let idx = rng.random_range(0..w.params[name].numel());
            let analytic = grads.get(p.get(name)).unwrap().data()[idx];
            let eval = |delta: f64| {
                let mut wp = w.clone();
                wp.params.get_mut(name).unwrap().data_mut()[idx] += delta;
                let (g, _, total) = comp.loss(&wp, false);
                g.value(total).item()
            };
            let numeric = (eval(H) - eval(-H)) / (2.0 * H);
            let err = relative_error(analytic, numeric);
            if err < TOL {
                worst = worst.max(err);
                passed += 1;
                checked += 1;
                continue;
            }
            // A piecewise-linear activation switched inside the stencil;
            // a ten times smaller step must then agree with the analytic value.
            let fine = (eval(H / 10.0) - eval(-H / 10.0)) / (0.2 * H);
            assert!(
                relative_error(analytic, fine) < 1e-6 && relative_error(numeric, fine) > 1e-4,
                "seed {seed} {name}[{idx}]: analytic {analytic} numeric {numeric} fine-step {fine}"
            );
            kinks += 1;
        }
    }
    format!(
        "26 ops x 5 seeds, worst {} {:.1e}; generate+loss {checked} weights over 5 seeds, worst {worst:.1e} ({kinks} kink samples confirmed at h/10)",
        worst_op.0, worst_op.1
    )
}

fn attention_normalization() -> String {
    let mut worst_sum = 0.0f64;
    let mut worst_shift = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..10u64 {
        let t = [1, 2, 12][rng.random_range(0..3)];
        let cfg = GeneratorConfig {
            t_len: t,
            seed: trial,
            ..GeneratorConfig::tiny()
        };
        let mut w = GeneratorWeights::init(&cfg).unwrap();
        let x = Tensor::uniform(vec![t, cfg.d_model], -2.0, 2.0, &mut rng);
        for layer in 0..cfg.n_tsa_layers {
            let (_, weights) = w.tsa_layer(&x, layer).unwrap();
            for head in &weights {
                for i in 0..t {
                    worst_sum = worst_sum.max((head.row(i).iter().sum::<f64>() - 1.0).abs());
                }
            }
            // A key bias adds the same amount to every logit of a query row.
            let name = format!("tsa{layer}.k.b");
            let shift = Tensor::uniform(vec![cfg.d_model], -5.0, 5.0, &mut rng);
            let original = w.get(&name).unwrap().clone();
            w.set(&name, original.zip_map(&shift, |a, b| a + b).unwrap()).unwrap();
            let (_, shifted) = w.tsa_layer(&x, layer).unwrap();
            w.set(&name, original).unwrap();
            for (a, b) in weights.iter().zip(&shifted) {
                worst_shift = worst_shift.max(a.max_abs_diff(b));
            }
        }
        // Direct logit shifts through the softmax itself.
        let logits = Tensor::uniform(vec![t, t], -30.0, 30.0, &mut rng);
        let c = rng.random_range(-100.0..100.0);
        let mut g = Graph::new();
        let l = g.constant(logits.clone());
        let ls = g.constant(logits.map(|v| v + c));
        let (a, b) = (g.softmax(l, 1).unwrap(), g.softmax(ls, 1).unwrap());
        worst_shift = worst_shift.max(g.value(a).max_abs_diff(g.value(b)));
    }
    assert!(worst_sum <= 1e-12, "row sum deviation {worst_sum:e}");
    assert!(worst_shift <= 1e-12, "shift deviation {worst_shift:e}");
    format!("10 random T in {{1, 2, 12}}: row-sum deviation {worst_sum:.1e}, logit-shift deviation {worst_shift:.1e}")
}

fn dft_magnitude(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    (0..x.len() / 2 + 1)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in x.iter().enumerate() {
                let a = -2.0 * PI * k as f64 * i as f64 / n;
                re += v * a.cos();
                im += v * a.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

fn oracle_log_mel(samples: &[f64], row: usize) -> Vec<f64> {
    let hz_to_mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let mel_to_hz = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let edges: Vec<f64> = (0..82).map(|i| mel_to_hz(hz_to_mel(8000.0) * i as f64 / 81.0)).collect();
    // 800-sample Hann frame centered on row * 200, mirrored at the edges.
    let len = samples.len() as i64;
    let frame: Vec<f64> = (0..800)
        .map(|n| {
            let mut i = (row * 200 + n) as i64 - 400;
            if i < 0 {
                i = -i;
            }
            if i >= len {
                i = 2 * (len - 1) - i;
            }
            let x = samples[i as usize];
            x * (0.5 - 0.5 * (2.0 * PI * n as f64 / 800.0).cos())
        })
        .collect();
    let mag = dft_magnitude(&frame);
    (0..80)
        .map(|m| {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let e: f64 = mag
                .iter()
                .enumerate()
                .map(|(k, a)| {
                    let f = k as f64 * 20.0;
                    let w = if f > lo && f <= c {
                        (f - lo) / (c - lo)
                    } else if f > c && f < hi {
                        (hi - f) / (hi - c)
                    } else {
                        0.0
                    };
                    a * w * 2.0 / (hi - lo)
                })
                .sum();
            e.max(1e-5).ln()
        })
        .collect()
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap()
}

fn audio_frontend() -> String {
    assert_eq!((TARGET_RATE, HOP_LENGTH, N_FFT, N_MELS, WINDOW_ROWS), (16_000, 200, 800, 80, 16));
    let mut bins = Vec::new();
    let mut worst = 0.0f64;
    for freq in [250.0, 700.0, 1000.0, 2500.0, 5500.0] {
        let samples: Vec<f64> = (0..16_000).map(|i| 0.5 * (2.0 * PI * freq * i as f64 / 16_000.0).sin()).collect();
        let mel = mel_spectrogram(&Waveform::new(samples.clone(), 16_000).unwrap()).unwrap();
        assert_eq!(mel.frames.shape(), [1 + 16_000 / 200, 80]);
        for row in [0, 40, 80] {
            let oracle = oracle_log_mel(&samples, row);
            let got = mel.frames.row(row);
            assert_eq!(argmax(got), argmax(&oracle), "{freq} Hz row {row}: argmax differs");
            for m in 0..80 {
                worst = worst.max((got[m] - oracle[m]).abs());
            }
        }
        bins.push(argmax(mel.frames.row(40)));
    }
    assert!(worst < 1e-9, "log-mel deviates from the DFT oracle by {worst:e}");
    assert!(bins.windows(2).all(|w| w[0] < w[1]), "peak bins not increasing: {bins:?}");

    let silence = mel_spectrogram(&Waveform::new(vec![0.0; 8000], 16_000).unwrap()).unwrap();
    assert!(silence.frames.data().iter().all(|v| *v == LOG_FLOOR.ln()));
    let windows: Vec<AudioWindow> = frame_windows(&silence, 25.0, 12).unwrap();
    assert_eq!(windows.len(), 12);
    assert!(windows.iter().all(|w| w.values.shape() == [16, 80]));
    format!("peak bins {bins:?} match the DFT+filterbank oracle (max |diff| {worst:.1e}); silence at ln(1e-5); 16x80 windows")
}

fn brute_displacement(p: &Tensor, g: &Tensor) -> f64 {
    let (t, n) = (p.shape()[0], p.shape()[1]);
    (0..t)
        .map(|f| {
            let mut sq = 0.0;
            for v in 0..n {
                for c in 0..3 {
                    sq += (p.get(&[f, v, c]) - g.get(&[f, v, c])).powi(2);
                }
            }
            sq.sqrt()
        })
        .sum::<f64>()
        / t as f64
}

fn brute_velocity(p: &Tensor, g: &Tensor) -> f64 {
    let (t, n) = (p.shape()[0], p.shape()[1]);
    let mut sq = 0.0;
    for f in 1..t {
        for v in 0..n {
            for c in 0..3 {
                let dp = p.get(&[f, v, c]) - p.get(&[f - 1, v, c]);
                let dg = g.get(&[f, v, c]) - g.get(&[f - 1, v, c]);
                sq += (dp - dg).powi(2);
            }
        }
    }
    sq.sqrt() / (t - 1) as f64
}

fn subset(x: &Tensor, idx: &[usize]) -> Tensor {
    let t = x.shape()[0];
    let mut data = Vec::new();
    for f in 0..t {
        for &v in idx {
            for c in 0..3 {
                data.push(x.get(&[f, v, c]));
            }
        }
    }
    Tensor::new(vec![t, idx.len(), 3], data).unwrap()
}

fn metric_oracles() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let lips = [0, 3, 4, 8];
    let mut worst = 0.0f64;
    let mut worst_offset = 0.0f64;
    for _ in 0..50 {
        let p = Tensor::uniform(vec![5, 10, 3], -1.0, 1.0, &mut rng);
        let g = Tensor::uniform(vec![5, 10, 3], -1.0, 1.0, &mut rng);
        let r = MetricReport::from_vertices(&p, &g, &lips, FrameNorm::Stacked).unwrap();
        let (lp, lg) = (subset(&p, &lips), subset(&g, &lips));
        for (got, want) in [
            (r.lde, brute_displacement(&lp, &lg)),
            (r.lve, brute_velocity(&lp, &lg)),
            (r.ede, brute_displacement(&p, &g)),
            (r.eve, brute_velocity(&p, &g)),
        ] {
            worst = worst.max((got - want).abs());
        }
        let same = MetricReport::from_vertices(&p, &p, &lips, FrameNorm::Stacked).unwrap();
        assert_eq!([same.lde, same.lve, same.ede, same.eve], [0.0; 4]);
        let o = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let shifted = Tensor::new(vec![5, 10, 3], p.data().iter().enumerate().map(|(i, v)| v + o[i % 3]).collect()).unwrap();
        let rs = MetricReport::from_vertices(&shifted, &g, &lips, FrameNorm::Stacked).unwrap();
        worst_offset = worst_offset.max((rs.lve - r.lve).abs()).max((rs.eve - r.eve).abs());
    }
    assert!(worst < 1e-12, "brute-force deviation {worst:e}");
    assert!(worst_offset < 1e-12, "offset sensitivity {worst_offset:e}");
    format!("50 pairs: max deviation {worst:.1e}; zero on identical inputs; offset change in LVE/EVE {worst_offset:.1e}")
}

fn lip_error(weights: &GeneratorWeights, asset: &HeadAsset, data: &[anim3d_core::training::ClipRecord]) -> f64 {
    let mut total = 0.0;
    for clip in data {
        let prepared = prepare_clip(clip).unwrap();
        let windows: Vec<AudioWindow> = (0..prepared.n_frames)
            .map(|t| AudioWindow {
                values: Tensor::new(
                    vec![16, 80],
                    prepared.windows.data()[t * 1280..(t + 1) * 1280].to_vec(),
                )
                .unwrap(),
                center_time: 0.0,
            })
            .collect();
        let style = StyleCode::new(clip.style_id, weights.config.n_styles).unwrap();
        let (psi, jaw) = weights.generate_sequence(&windows, &style).unwrap();
        let cams: Vec<[f64; 3]> = clip.frames.iter().map(|f| f.camera).collect();
        let pred = assemble_animation(&clip.frames[0], &psi, &jaw, &cams, None).unwrap();
        let report = MetricReport::from_params(asset, &pred, &clip.frames, FrameNorm::Stacked).unwrap();
        total += report.lde;
    }
    total / data.len() as f64
}

fn overfit_convergence() -> String {
    let asset = generate_toy_asset(0, 32, 4, 10).unwrap();
    // Eight clips exactly one segment long, so every step sees all of them.
    let data = make_synthetic_dataset(1, 8, 12, &asset).unwrap();
    let clips: Vec<PreparedClip> = data.iter().map(|c| prepare_clip(c).unwrap()).collect();
    let gen = GeneratorConfig {
        d_psi: 10,
        ..GeneratorConfig::tiny()
    };
    assert_eq!((gen.d_model, gen.n_tsa_layers), (64, 2));
    let initial = GeneratorWeights::init(&gen).unwrap();
    let lde_before = lip_error(&initial, &asset, &data);
    let reg_before = evaluate_reg(&initial, &clips, false).unwrap();
    let cfg = TrainConfig {
        stage1_steps: 2000,
        stage2_steps: 0,
        batch1: 8,
        lr: 1e-4,
        ..TrainConfig::default()
    };
    let outcome = train_from(&cfg, initial, &clips, &asset).unwrap();
    let h = &outcome.history;
    assert_eq!(h.len(), 2000);
    assert!((h[0].reg - reg_before).abs() <= 1e-12 * reg_before, "first logged loss is the untrained full-set loss");
    // Each logged value is measured before its update, so the loss of the
    // returned weights needs one more full-set pass.
    let trained = &outcome.checkpoint.weights;
    let reg_after = evaluate_reg(trained, &clips, false).unwrap();
    let ratio = reg_after / reg_before;
    let lde_after = lip_error(trained, &asset, &data);
    let lde_ratio = lde_after / lde_before;
    let detail = format!(
        "stage-1 loss {reg_before:.4} -> {reg_after:.4} ({:.3}% of initial; last logged step {:.3}%); LDE {lde_before:.3e} -> {lde_after:.3e} ({:.2}%)",
        100.0 * ratio,
        100.0 * h[h.len() - 1].reg / h[0].reg,
        100.0 * lde_ratio
    );
    assert!(ratio < 0.01, "{detail}");
    assert!(lde_ratio < 0.1, "{detail}");
    detail
}

fn loss_weights() -> String {
    let defaults = TrainConfig::default().loss_weights();
    assert_eq!((defaults.reg, defaults.mc), (1.0, 0.1));
    let pairs = [(2.0, 10.0, 3.0), (3.0, 20.0, 5.0), (0.25, 40.0, 4.25), (7.0, 0.0, 7.0), (0.0, 30.0, 3.0), (0.0, 0.0, 0.0)];
    for (l_reg, l_mc, expected) in pairs {
        let got = total_loss(&defaults, l_reg, l_mc).unwrap();
        assert!(got == expected, "L_reg {l_reg}, L_mc {l_mc}: got {got}, expected {expected}");
    }
    // The training graph composes its two terms with the same weights.
    let comp = Composition::new(7);
    let w = GeneratorWeights::init(&comp.cfg).unwrap();
    let batch = make_batch(&comp.clips, &[(0, 0), (1, 4)], comp.cfg.t_len).unwrap();
    let mut g = Graph::new();
    let p = w.bind(&mut g, false);
    let l = batch_loss(&mut g, &p, &comp.cfg, &batch, &defaults, Some(&comp.rig), false).unwrap();
    let total = g.value(l.total).item();
    let composed = total_loss(&defaults, l.reg, l.mc).unwrap();
    assert!((total - composed).abs() <= 1e-12 * total, "graph total {total} vs {composed}");
    format!("{} hand pairs exact with (1, 0.1); training graph total matches to {:.1e}", pairs.len(), (total - composed).abs())
}

fn emotion_masking() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = rng.random_range(4..60);
        let psi: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let template = EmotionTemplate {
            label: EmotionLabel::ALL[rng.random_range(0..5)],
            psi_temp: (0..d).map(|_| rng.random_range(-3.0..3.0)).collect(),
            n_valid_frames: 1,
        };
        let a = rng.random_range(0.0..=1.0);
        let b = rng.random_range(0.01..=1.0);
        let out_a = apply_emotion(&psi, &template, &make_weight(a, d).unwrap()).unwrap();
        let out_b = apply_emotion(&psi, &template, &make_weight(b, d).unwrap()).unwrap();
        for &k in &MASKED_DIMS {
            assert!(out_a[k].to_bits() == psi[k].to_bits(), "masked dim {k} changed");
        }
        for k in 0..d {
            worst = worst.max(((out_a[k] - psi[k]) - (a / b) * (out_b[k] - psi[k])).abs());
        }
    }
    assert!(worst < 1e-12, "linearity deviation {worst:e}");

    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["synth-data", "--out", s(&data), "--clips", "1", "--frames", "10", "--seed", "2"]);
    let input = data.join("clip_000").join("params.bin");
    let original = ParamSequence::load(&input).unwrap();
    let psi_temp: Vec<f64> = (0..10).map(|k| 0.2 * k as f64 - 0.7).collect();
    let template = tmp.path().join("t.bin");
    EmotionTemplate {
        label: EmotionLabel::Angry,
        psi_temp: psi_temp.clone(),
        n_valid_frames: 3,
    }
    .save(&template)
    .unwrap();
    for (preset, w) in [("subtle", 0.4), ("strong", 0.8)] {
        let out = tmp.path().join(format!("{preset}.bin"));
        ok(&["emotion", "--in", s(&input), "--template", s(&template), "--intensity", preset, "--out", s(&out)]);
        let seq = ParamSequence::load(&out).unwrap();
        for (f, g) in seq.frames.iter().zip(&original.frames) {
            for k in 0..10 {
                let expected = if MASKED_DIMS.contains(&k) { g.psi[k] } else { g.psi[k] + w * psi_temp[k] };
                assert!(f.psi[k].to_bits() == expected.to_bits(), "{preset}: dim {k}");
            }
        }
    }
    format!("100 triples: masked dims bit-identical, linearity deviation {worst:.1e}; CLI presets subtle/strong exact")
}

fn batch_map(obs: &[f64], cfg: &SmootherConfig) -> Vec<f64> {
    let t = obs.len();
    let q = cfg.process_covariance();
    let q_inv = Matrix2::new(q[0][0], q[0][1], q[1][0], q[1][1]).try_inverse().unwrap();
    let f = Matrix2::new(1.0, 1.0, 0.0, 1.0);
    let mut info = DMatrix::<f64>::zeros(2 * t, 2 * t);
    let mut rhs = DVector::<f64>::zeros(2 * t);
    let p0 = 1.0 / cfg.prior_variance();
    info[(0, 0)] += p0;
    info[(1, 1)] += p0;
    rhs[0] += p0 * obs[0];
    for k in 0..t {
        info[(2 * k, 2 * k)] += 1.0 / cfg.r;
        rhs[2 * k] += obs[k] / cfg.r;
    }
    let a = f.transpose() * q_inv * f;
    let b = -(f.transpose() * q_inv);
    for k in 0..t - 1 {
        for i in 0..2 {
            for j in 0..2 {
                info[(2 * k + i, 2 * k + j)] += a[(i, j)];
                info[(2 * k + 2 + i, 2 * k + 2 + j)] += q_inv[(i, j)];
                info[(2 * k + i, 2 * k + 2 + j)] += b[(i, j)];
                info[(2 * k + 2 + j, 2 * k + i)] += b[(i, j)];
            }
        }
    }
    let x = info.lu().solve(&rhs).unwrap();
    (0..t).map(|k| x[2 * k]).collect()
}

fn kalman_smoother() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut map_dev, mut limit_dev, mut shift_dev) = (0.0f64, 0.0f64, 0.0f64);
    for trial in 0..20 {
        let cfg = SmootherConfig {
            q: 10f64.powf(rng.random_range(-4.0..0.0)),
            r: 10f64.powf(rng.random_range(-3.0..0.0)),
        };
        let obs: Vec<f64> = (0..20).map(|i| (0.3 * i as f64).sin() + rng.random_range(-0.3..0.3)).collect();
        let rts = smooth_track(&obs, &cfg).unwrap();
        for (a, b) in rts.iter().zip(batch_map(&obs, &cfg)) {
            map_dev = map_dev.max((a - b).abs());
        }
        let exact = smooth_track(&obs, &SmootherConfig { q: cfg.q, r: 1e-12 * cfg.q }).unwrap();
        for (a, b) in exact.iter().zip(&obs) {
            limit_dev = limit_dev.max((a - b).abs());
        }
        let c = 50.0 * (trial as f64 - 10.0);
        let shifted: Vec<f64> = obs.iter().map(|v| v + c).collect();
        for (a, b) in smooth_track(&shifted, &cfg).unwrap().iter().zip(&rts) {
            shift_dev = shift_dev.max((a - (b + c)).abs());
        }
    }
    assert!(map_dev < 1e-8, "MAP deviation {map_dev:e}");
    assert!(limit_dev < 1e-6, "perfect-measurement deviation {limit_dev:e}");
    assert!(shift_dev < 1e-10, "shift deviation {shift_dev:e}");
    format!("20 sequences: MAP deviation {map_dev:.1e}, r->0 deviation {limit_dev:.1e}, shift deviation {shift_dev:.1e}")
}

/// synth-data -> train -> animate -> evaluate in `root`; returns the report path.
fn pipeline(root: &Path) -> (usize, std::path::PathBuf) {
    let data = root.join("data");
    let run = root.join("run");
    let anim = root.join("anim");
    let seed = "11";
    ok(&["synth-data", "--out", s(&data), "--clips", "8", "--frames", "50", "--seed", seed]);
    ok(&[
        "train", "--data", s(&data), "--out", s(&run), "--tiny", "--stage1-steps", "60", "--stage2-steps", "20",
        "--seed", seed,
    ]);
    let clip = data.join("clip_002");
    ok(&[
        "animate", "--audio", s(&clip.join("audio.wav")), "--ref", s(&clip.join("params.bin")), "--style", "2",
        "--checkpoint", s(&run.join("checkpoint.bin")), "--asset", s(&data.join("asset.bin")), "--out", s(&anim),
    ]);
    let report = root.join("report.json");
    ok(&[
        "evaluate", "--pred", s(&anim.join("params.bin")), "--gt", s(&clip.join("params.bin")), "--asset",
        s(&data.join("asset.bin")), "--out", s(&report),
    ]);
    let n_v = HeadAsset::load(&data.join("asset.bin")).unwrap().n_vertices();
    (n_v, report)
}

fn end_to_end_cli() -> String {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let (n_v, report) = pipeline(&a);
    pipeline(&b);

    let frames = a.join("anim").join("frames");
    let mut objs: Vec<_> = fs::read_dir(&frames).unwrap().map(|e| e.unwrap().path()).collect();
    objs.sort();
    assert_eq!(objs.len(), 50, "expected one OBJ per frame of the 2 s clip");
    assert!(objs.iter().all(|p| obj_vertex_count(p) == n_v));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    for key in ["lde", "lve", "ede", "eve"] {
        assert!(json[key].as_f64().is_some_and(|v| v.is_finite() && v >= 0.0), "report {key}");
    }
    assert_eq!(json["per_frame"]["lde"].as_array().map(Vec::len), Some(50));

    let mut compared = 0;
    for rel in ["run/checkpoint.bin", "run/loss_history.csv", "anim/params.bin", "report.json"] {
        assert!(fs::read(a.join(rel)).unwrap() == fs::read(b.join(rel)).unwrap(), "{rel} differs between runs");
        compared += 1;
    }
    for p in &objs {
        let other = b.join("anim").join("frames").join(p.file_name().unwrap());
        assert!(fs::read(p).unwrap() == fs::read(other).unwrap(), "{} differs", p.display());
        compared += 1;
    }
    let bad = anim3d(&["evaluate", "--pred", "missing.bin", "--gt", "missing.bin", "--asset", "missing.bin", "--out", "x"]);
    assert_eq!(bad.status.code(), Some(2));
    format!(
        "all stages exit 0; 50 OBJs of {n_v} vertices; report LDE {:.3e}; {compared} artifacts byte-identical across two runs",
        json["lde"].as_f64().unwrap()
    )
}
