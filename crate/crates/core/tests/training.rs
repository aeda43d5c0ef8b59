use anim3d_core::error::CoreError;
use anim3d_core::generator::{forward_graph, GeneratorConfig, GeneratorWeights};
use anim3d_core::head::{generate_toy_asset, lip_landmarks_3d, FaceParams, HeadAsset, LandmarkRig, JOINT_JAW};
use anim3d_core::training::{
    batch_loss, load_dataset, loss_mc, loss_reg, loss_reg_with, make_batch, make_synthetic_dataset, prepare_clip,
    projected_lips, save_dataset, total_loss, train, LossWeights, TrainConfig, SYNTH_FPS,
};
use anim3d_numerics::{Graph, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn asset() -> HeadAsset {
    generate_toy_asset(0, 32, 4, 6).unwrap()
}

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

#[test]
fn regression_loss_examples() {
    let mut psi_gt = vec![0.0; 6];
    let zero_jaw = t(&[1, 3], &[0.0; 3]);
    let gt = t(&[1, 6], &psi_gt);
    psi_gt[0] = 3.0;
    psi_gt[1] = 4.0;
    let pred = t(&[1, 6], &psi_gt);
    assert_eq!(loss_reg(&pred, &gt, &zero_jaw, &zero_jaw).unwrap(), 5.0);
    assert_eq!(loss_reg(&gt, &pred, &zero_jaw, &zero_jaw).unwrap(), 5.0);
    assert_eq!(loss_reg(&pred, &pred, &zero_jaw, &zero_jaw).unwrap(), 0.0);
    assert_eq!(loss_reg_with(&pred, &gt, &zero_jaw, &zero_jaw, true).unwrap(), 25.0);
    // Two frames: (3, 4) expression error and (0, 0, 2) jaw error in frame 1.
    let jaw = t(&[2, 3], &[0.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
    let two = |row1: &[f64]| t(&[2, 2], &[0.0, 0.0, row1[0], row1[1]]);
    let l = loss_reg(&two(&[3.0, 4.0]), &two(&[0.0, 0.0]), &jaw, &t(&[2, 3], &[0.0; 6])).unwrap();
    assert_eq!(l, 7.0);
    assert!(matches!(
        loss_reg(&pred, &t(&[1, 5], &[0.0; 5]), &zero_jaw, &zero_jaw),
        Err(CoreError::Argument(_))
    ));
}

#[test]
fn graph_regression_loss_matches_scalar_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = Tensor::uniform(vec![5, 6], -1.0, 1.0, &mut rng);
    let b = Tensor::uniform(vec![5, 6], -1.0, 1.0, &mut rng);
    let ja = Tensor::uniform(vec![5, 3], -1.0, 1.0, &mut rng);
    let jb = Tensor::uniform(vec![5, 3], -1.0, 1.0, &mut rng);
    for squared in [false, true] {
        let mut g = Graph::new();
        let ids = [&a, &b, &ja, &jb].map(|x| g.constant(x.clone()));
        let l = anim3d_core::training::loss_reg_graph(&mut g, ids[0], ids[1], ids[2], ids[3], squared).unwrap();
        let expected = loss_reg_with(&a, &b, &ja, &jb, squared).unwrap();
        assert!((g.value(l).item() - expected).abs() < 1e-12);
    }
}

fn lip_frame(asset: &HeadAsset, camera: [f64; 3]) -> FaceParams {
    let mut f = FaceParams::neutral(asset.d_beta(), asset.d_psi(), 2);
    f.camera = camera;
    f.psi[1] = 0.4;
    f.set_joint_pose(JOINT_JAW, [0.2, 0.0, 0.0]);
    f
}

#[test]
fn mouth_closure_loss_examples() {
    let asset = asset();
    let f = lip_frame(&asset, [1.0, 0.0, 0.0]);
    let gt = vec![projected_lips(&asset, &f).unwrap()];
    assert_eq!(loss_mc(&asset, std::slice::from_ref(&f), Some(&gt)).unwrap(), 0.0);

    let mut shifted = gt.clone();
    shifted[0][3][0] += 0.3;
    shifted[0][3][1] -= 0.4;
    let l = loss_mc(&asset, std::slice::from_ref(&f), Some(&shifted)).unwrap();
    assert!((l - 0.7).abs() < 1e-12);

    assert!(matches!(loss_mc(&asset, std::slice::from_ref(&f), None), Err(CoreError::Config(_))));
    assert!(loss_mc(&asset, &[f.clone(), f], Some(&gt)).is_err());
}

#[test]
fn mouth_closure_loss_scales_with_camera() {
    let asset = asset();
    let gt_frame = lip_frame(&asset, [1.0, 0.0, 0.0]);
    let mut pred = gt_frame.clone();
    pred.psi[2] += 0.5;
    pred.set_joint_pose(JOINT_JAW, [0.1, 0.0, 0.0]);
    let l = |s: f64| {
        let mut g = gt_frame.clone();
        let mut p = pred.clone();
        g.camera[0] = s;
        p.camera[0] = s;
        let gt = vec![projected_lips(&asset, &g).unwrap()];
        loss_mc(&asset, &[p], Some(&gt)).unwrap()
    };
    // Oracle: the L1 distance of the unprojected x, y coordinates times scale.
    let pm = lip_landmarks_3d(&asset, &pred.mesh(&asset).unwrap());
    let gm = lip_landmarks_3d(&asset, &gt_frame.mesh(&asset).unwrap());
    let raw: f64 = pm.iter().zip(&gm).map(|(a, b)| (a[0] - b[0]).abs() + (a[1] - b[1]).abs()).sum();
    assert!(raw > 0.0);
    assert!((l(1.0) - raw).abs() < 1e-12);
    assert!((l(2.0) - 2.0 * l(1.0)).abs() < 1e-12);
}

#[test]
fn graph_mouth_closure_matches_scalar_form() {
    let asset = asset();
    let clips = make_synthetic_dataset(3, 2, 12, &asset).unwrap();
    let prepared: Vec<_> = clips.iter().map(|c| prepare_clip(c).unwrap()).collect();
    let cfg = GeneratorConfig {
        d_psi: asset.d_psi(),
        n_styles: 4,
        ..GeneratorConfig::tiny()
    };
    let w = GeneratorWeights::init(&cfg).unwrap();
    let batch = make_batch(&prepared, &[(0, 0), (1, 0)], 12).unwrap();
    let rig = LandmarkRig::new(&asset);
    let weights = LossWeights::default();
    let mut g = Graph::new();
    let p = w.bind(&mut g, false);
    let loss = batch_loss(&mut g, &p, &cfg, &batch, &weights, Some(&rig), false).unwrap();

    let mut g2 = Graph::new();
    let p2 = w.bind(&mut g2, false);
    let out = forward_graph(&mut g2, &p2, &cfg, &batch.windows, &batch.styles).unwrap();
    let (psi, jaw) = (g2.value(out.psi).clone(), g2.value(out.jaw).clone());
    let mut expected_mc = 0.0;
    let mut expected_reg = 0.0;
    for (b, clip) in clips.iter().enumerate() {
        let frames: Vec<FaceParams> = (0..12)
            .map(|i| {
                let mut f = clip.frames[i].clone();
                let k = b * 12 + i;
                f.psi = psi.data()[k * cfg.d_psi..(k + 1) * cfg.d_psi].to_vec();
                f.set_joint_pose(JOINT_JAW, [jaw.data()[k * 3], jaw.data()[k * 3 + 1], jaw.data()[k * 3 + 2]]);
                f
            })
            .collect();
        expected_mc += loss_mc(&asset, &frames, clip.gt_lip_2d.as_deref()).unwrap();
        let seg = |x: &Tensor, d: usize| t(&[12, d], &x.data()[b * 12 * d..(b + 1) * 12 * d]);
        expected_reg += loss_reg(
            &seg(&psi, cfg.d_psi),
            &prepared[b].psi,
            &seg(&jaw, 3),
            &prepared[b].jaw,
        )
        .unwrap();
    }
    assert!(expected_mc > 0.0);
    assert!((loss.mc - expected_mc / 2.0).abs() < 1e-9 * expected_mc);
    assert!((loss.reg - expected_reg / 2.0).abs() < 1e-9 * expected_reg);
    let total = g.value(loss.total).item();
    assert!((total - (loss.reg + 0.1 * loss.mc)).abs() < 1e-9 * total);
}

#[test]
fn total_loss_examples() {
    let w = LossWeights::default();
    assert_eq!(total_loss(&w, 2.0, 10.0).unwrap(), 3.0);
    assert_eq!(total_loss(&w, 0.0, 0.0).unwrap(), 0.0);
    let no_mc = LossWeights { mc: 0.0, ..w };
    assert_eq!(total_loss(&no_mc, 2.5, 10.0).unwrap(), 2.5);
    for (pho, emo) in [(0.1, 0.0), (0.0, 0.1)] {
        let bad = LossWeights { pho, emo, ..w };
        assert!(matches!(total_loss(&bad, 1.0, 1.0), Err(CoreError::UnsupportedTerm(_))));
    }
    assert!(total_loss(&LossWeights { reg: -1.0, ..w }, 1.0, 1.0).is_err());
}

#[test]
fn unsupported_terms_are_rejected_by_training() {
    let asset = asset();
    let data = make_synthetic_dataset(0, 1, 12, &asset).unwrap();
    let gen = GeneratorConfig {
        d_psi: 6,
        n_styles: 4,
        ..GeneratorConfig::tiny()
    };
    let cfg = TrainConfig {
        stage1_steps: 1,
        stage2_steps: 0,
        lambda_pho: 1.0,
        ..TrainConfig::default()
    };
    assert!(matches!(train(&cfg, &gen, &data, &asset), Err(CoreError::UnsupportedTerm(_))));
    let cfg = TrainConfig {
        stage1_steps: 1,
        stage2_steps: 0,
        ..TrainConfig::default()
    };
    assert!(matches!(train(&cfg, &gen, &[], &asset), Err(CoreError::Argument(_))));
}

#[test]
fn synthetic_data_is_deterministic_and_self_consistent() {
    let asset = asset();
    let a = make_synthetic_dataset(7, 3, 40, &asset).unwrap();
    let b = make_synthetic_dataset(7, 3, 40, &asset).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, make_synthetic_dataset(8, 3, 40, &asset).unwrap());
    for clip in &a {
        assert_eq!(clip.fps, SYNTH_FPS);
        assert_eq!(clip.n_frames(), 40);
        assert_eq!(loss_mc(&asset, &clip.frames, clip.gt_lip_2d.as_deref()).unwrap(), 0.0);
    }
    assert!(make_synthetic_dataset(0, 0, 10, &asset).is_err());
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn jaw_opening_correlates_with_audio_energy() {
    let asset = asset();
    for clip in make_synthetic_dataset(11, 4, 100, &asset).unwrap() {
        let per_frame = clip.audio.sample_rate as f64 / clip.fps;
        let rms: Vec<f64> = (0..clip.n_frames())
            .map(|i| {
                let lo = (i as f64 * per_frame) as usize;
                let hi = (((i + 1) as f64 * per_frame) as usize).min(clip.audio.samples.len());
                let s = &clip.audio.samples[lo..hi];
                (s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64).sqrt()
            })
            .collect();
        let jaw: Vec<f64> = clip.frames.iter().map(|f| f.joint_pose(JOINT_JAW)[0]).collect();
        let r = pearson(&jaw, &rms);
        assert!(r > 0.5, "{}: correlation {r}", clip.clip_id);
    }
}

#[test]
fn datasets_round_trip_through_disk() {
    let asset = asset();
    let dir = tempfile::tempdir().unwrap();
    let clips = make_synthetic_dataset(2, 3, 20, &asset).unwrap();
    save_dataset(dir.path(), &clips).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in clips.iter().zip(&back) {
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.gt_lip_2d, b.gt_lip_2d);
        assert_eq!((a.style_id, a.identity_id, &a.clip_id), (b.style_id, b.identity_id, &b.clip_id));
        assert_eq!(a.audio.samples.len(), b.audio.samples.len());
        let err = a.audio.samples.iter().zip(&b.audio.samples).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err < 1e-4);
    }
    let empty = tempfile::tempdir().unwrap();
    assert!(load_dataset(empty.path()).is_err());
}

fn short_run(seed: u64) -> anim3d_core::training::TrainOutcome {
    let asset = asset();
    let data = make_synthetic_dataset(5, 3, 20, &asset).unwrap();
    let gen = GeneratorConfig {
        d_psi: 6,
        n_styles: 4,
        seed,
        ..GeneratorConfig::tiny()
    };
    let cfg = TrainConfig {
        stage1_steps: 4,
        stage2_steps: 3,
        batch1: 2,
        batch2: 8,
        seed,
        ..TrainConfig::default()
    };
    train(&cfg, &gen, &data, &asset).unwrap()
}

#[test]
fn training_history_and_determinism() {
    let a = short_run(3);
    assert_eq!(a.history.len(), 7);
    assert!(a.history[..4].iter().all(|r| r.stage == 1 && r.mc == 0.0));
    assert!(a.history[4..].iter().all(|r| r.stage == 2 && r.mc > 0.0));
    for r in &a.history {
        assert!((r.total - (r.reg + 0.1 * r.mc)).abs() < 1e-9 * r.total);
    }
    assert_eq!(a.history.iter().map(|r| r.step).collect::<Vec<_>>(), (0..7).collect::<Vec<_>>());
    let b = short_run(3);
    assert_eq!(a.checkpoint.weights, b.checkpoint.weights);
    assert_eq!(a.history, b.history);
    assert_ne!(a.checkpoint.weights, short_run(4).checkpoint.weights);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn total_loss_is_linear_in_each_weight(
        reg in 0.0f64..5.0, mc in 0.0f64..5.0, l_reg in 0.0f64..100.0, l_mc in 0.0f64..100.0, k in 0.0f64..4.0,
    ) {
        let base = LossWeights { reg, mc, ..LossWeights::default() };
        let f = |w: LossWeights| total_loss(&w, l_reg, l_mc).unwrap();
        let scaled_reg = f(LossWeights { reg: k * reg, ..base }) - f(LossWeights { reg: 0.0, ..base });
        prop_assert!((scaled_reg - k * reg * l_reg).abs() < 1e-9);
        let scaled_mc = f(LossWeights { mc: k * mc, ..base }) - f(LossWeights { mc: 0.0, ..base });
        prop_assert!((scaled_mc - k * mc * l_mc).abs() < 1e-9);
    }

    #[test]
    fn regression_loss_is_nonnegative_and_zero_only_on_match(
        a in prop::collection::vec(-3.0f64..3.0, 12), b in prop::collection::vec(-3.0f64..3.0, 12),
    ) {
        let (pa, pb) = (t(&[3, 4], &a), t(&[3, 4], &b));
        let l = loss_reg(&pa, &pb, &t(&[3, 3], &[0.0; 9]), &t(&[3, 3], &[0.0; 9])).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert_eq!(l == 0.0, a == b);
        prop_assert_eq!(loss_reg(&pa, &pa, &t(&[3, 3], &[0.0; 9]), &t(&[3, 3], &[0.0; 9])).unwrap(), 0.0);
    }

    #[test]
    fn mouth_closure_ignores_shared_translation(tx in -0.5f64..0.5, ty in -0.5f64..0.5, dpsi in -1.0f64..1.0) {
        let asset = asset();
        let gt_frame = lip_frame(&asset, [1.3, 0.0, 0.0]);
        let mut pred = gt_frame.clone();
        pred.psi[0] += dpsi;
        let l = |cam: [f64; 3]| {
            let mut g = gt_frame.clone();
            let mut p = pred.clone();
            g.camera = cam;
            p.camera = cam;
            let gt = vec![projected_lips(&asset, &g).unwrap()];
            loss_mc(&asset, &[p], Some(&gt)).unwrap()
        };
        prop_assert!((l([1.3, tx, ty]) - l([1.3, 0.0, 0.0])).abs() < 1e-12);
    }
}
