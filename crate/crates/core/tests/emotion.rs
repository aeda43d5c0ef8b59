use anim3d_core::emotion::{
    apply_emotion, extract_template, make_weight, project_codes_2d, read_label_sidecar, EmotionLabel, EmotionTemplate,
    LabeledClip, INTENSITY_STRONG, INTENSITY_SUBTLE, MASKED_DIMS,
};
use anim3d_core::error::CoreError;
use anim3d_numerics::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn clip(rows: &[&[f64]], labels: &[&str]) -> LabeledClip {
    let d = rows[0].len();
    LabeledClip {
        psi: Tensor::new(vec![rows.len(), d], rows.concat()).unwrap(),
        labels: labels.iter().map(|s| s.to_string()).collect(),
    }
}

fn template(values: Vec<f64>) -> EmotionTemplate {
    EmotionTemplate {
        label: EmotionLabel::Happy,
        psi_temp: values,
        n_valid_frames: 1,
    }
}

#[test]
fn template_examples() {
    let v = [0.3, -1.0, 2.0, 0.5];
    let same = clip(&[&v, &v, &v], &["angry"; 3]);
    let t = extract_template(&[same], EmotionLabel::Angry).unwrap();
    assert_eq!(t.psi_temp, v);
    assert_eq!(t.n_valid_frames, 3);

    let c = clip(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[9.0, 9.0, 9.0]], &["sad", "sad", "happy"]);
    let t = extract_template(std::slice::from_ref(&c), EmotionLabel::Sad).unwrap();
    assert_eq!(t.psi_temp, [0.5, 0.5, 0.0]);
    assert_eq!(t.n_valid_frames, 2);
    assert!(matches!(
        extract_template(&[c], EmotionLabel::Surprise),
        Err(CoreError::EmptyTemplate(_))
    ));
    assert!(extract_template(&[clip(&[&[1.0]], &["happy", "happy"])], EmotionLabel::Happy).is_err());
}

#[test]
fn templates_pool_frames_across_clips() {
    let a = clip(&[&[2.0, 0.0], &[5.0, 5.0]], &["contempt", "neutral"]);
    let b = clip(&[&[0.0, 4.0]], &["contempt"]);
    let t = extract_template(&[a.clone(), b.clone()], EmotionLabel::Contempt).unwrap();
    assert_eq!(t.psi_temp, [1.0, 2.0]);
    let swapped = extract_template(&[b, a], EmotionLabel::Contempt).unwrap();
    assert_eq!(swapped, t);
}

#[test]
fn weight_examples() {
    assert_eq!(make_weight(0.0, 8).unwrap().as_slice(), &[0.0; 8]);
    let w = make_weight(INTENSITY_SUBTLE, 8).unwrap();
    assert_eq!(INTENSITY_SUBTLE, 0.4);
    assert_eq!(INTENSITY_STRONG, 0.8);
    assert_eq!(w.as_slice(), &[0.0, 0.4, 0.4, 0.0, 0.4, 0.4, 0.4, 0.4]);
    assert_eq!(MASKED_DIMS, [0, 3]);
    for bad in [-0.1, 1.1, f64::NAN] {
        assert!(matches!(make_weight(bad, 8), Err(CoreError::Argument(_))));
    }
}

#[test]
fn apply_examples() {
    let t = template(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    let psi = [0.5, -0.5, 0.25, 1.0, 0.0];
    assert_eq!(apply_emotion(&psi, &t, &make_weight(0.0, 5).unwrap()).unwrap(), psi);
    let full = apply_emotion(&[0.0; 5], &t, &make_weight(1.0, 5).unwrap()).unwrap();
    assert_eq!(full, [0.0, 2.0, 3.0, 0.0, 5.0]);
    assert!(apply_emotion(&psi[..4], &t, &make_weight(1.0, 5).unwrap()).is_err());
    assert!(apply_emotion(&psi, &t, &make_weight(1.0, 4).unwrap()).is_err());
}

#[test]
fn templates_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("happy.bin");
    let t = EmotionTemplate {
        label: EmotionLabel::Surprise,
        psi_temp: vec![0.1, -0.2, 1e-300, 7.0],
        n_valid_frames: 12,
    };
    t.save(&path).unwrap();
    assert_eq!(EmotionTemplate::load(&path).unwrap(), t);
    let bad = EmotionTemplate { n_valid_frames: 0, ..t };
    assert!(bad.save(&path).is_err());
}

#[test]
fn label_sidecars_are_json_string_arrays() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("labels.json");
    std::fs::write(&path, r#"["happy", "neutral", "sad"]"#).unwrap();
    assert_eq!(read_label_sidecar(&path).unwrap(), ["happy", "neutral", "sad"]);
    std::fs::write(&path, r#"{"0": "happy"}"#).unwrap();
    assert!(matches!(read_label_sidecar(&path), Err(CoreError::Schema { .. })));
}

#[test]
fn projection_recovers_axis_aligned_codes() {
    // Centered, uncorrelated, variance along x dominates y.
    let pts = [[3.0, 0.5], [-3.0, 0.5], [1.0, -0.5], [-1.0, -0.5], [0.0, 0.0]];
    let codes = Tensor::new(vec![5, 2], pts.concat()).unwrap();
    let p = project_codes_2d(&codes).unwrap();
    for (got, want) in p.points.iter().zip(&pts) {
        assert!((got[0].abs() - want[0].abs()).abs() < 1e-12);
        assert!((got[1].abs() - want[1].abs()).abs() < 1e-12);
    }
    assert!((p.explained[0] + p.explained[1] - 1.0).abs() < 1e-12);
    assert!(p.explained[0] > p.explained[1]);
    for axis in &p.axes {
        let big = axis.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        assert!(big > 0.0);
    }
}

#[test]
fn projection_of_duplicates_and_degenerate_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base = Tensor::uniform(vec![4, 5], -1.0, 1.0, &mut rng);
    let doubled = Tensor::new(vec![8, 5], [base.data(), base.data()].concat()).unwrap();
    let p = project_codes_2d(&doubled).unwrap();
    for i in 0..4 {
        assert_eq!(p.points[i], p.points[i + 4]);
    }
    let line = Tensor::new(vec![3, 2], vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0]).unwrap();
    let p = project_codes_2d(&line).unwrap();
    assert!(p.points.iter().all(|q| q[1] == 0.0));
    assert_eq!(p.explained[1], 0.0);
    assert!(project_codes_2d(&Tensor::zeros(vec![2, 3])).is_err());
}

#[test]
fn projection_separates_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Normal::new(0.0, 0.2).unwrap();
    let d = 10;
    let centers: Vec<Vec<f64>> = (0..3).map(|c| (0..d).map(|k| if k % 3 == c { 3.0 } else { 0.0 }).collect()).collect();
    let mut data = Vec::new();
    for c in &centers {
        for _ in 0..30 {
            data.extend(c.iter().map(|v| v + noise.sample(&mut rng)));
        }
    }
    let p = project_codes_2d(&Tensor::new(vec![90, d], data).unwrap()).unwrap();
    let stats: Vec<([f64; 2], f64)> = (0..3)
        .map(|c| {
            let pts = &p.points[c * 30..(c + 1) * 30];
            let m = [0, 1].map(|k| pts.iter().map(|q| q[k]).sum::<f64>() / 30.0);
            let var = pts.iter().map(|q| (q[0] - m[0]).powi(2) + (q[1] - m[1]).powi(2)).sum::<f64>() / 30.0;
            (m, var.sqrt())
        })
        .collect();
    let max_std = stats.iter().map(|s| s.1).fold(0.0, f64::max);
    for i in 0..3 {
        for j in i + 1..3 {
            let dist = ((stats[i].0[0] - stats[j].0[0]).powi(2) + (stats[i].0[1] - stats[j].0[1]).powi(2)).sqrt();
            assert!(dist > max_std, "clusters {i},{j}: {dist} vs {max_std}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn masked_dims_are_untouched_and_intensity_is_linear(
        psi in prop::collection::vec(-5.0f64..5.0, 10),
        temp in prop::collection::vec(-5.0f64..5.0, 10),
        a in 0.0f64..=1.0,
        b in 0.01f64..=1.0,
    ) {
        let t = template(temp);
        let out_a = apply_emotion(&psi, &t, &make_weight(a, 10).unwrap()).unwrap();
        let out_b = apply_emotion(&psi, &t, &make_weight(b, 10).unwrap()).unwrap();
        for &k in &MASKED_DIMS {
            prop_assert_eq!(out_a[k].to_bits(), psi[k].to_bits());
        }
        for k in 0..10 {
            let lhs = out_a[k] - psi[k];
            let rhs = (a / b) * (out_b[k] - psi[k]);
            prop_assert!((lhs - rhs).abs() < 1e-12, "dim {}: {} vs {}", k, lhs, rhs);
        }
    }

    #[test]
    fn template_ignores_frame_order(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let psi = Tensor::uniform(vec![6, 3], -1.0, 1.0, &mut rng);
        let labels = ["happy", "sad", "happy", "happy", "angry", "sad"];
        let forward = LabeledClip { psi: psi.clone(), labels: labels.iter().map(|s| s.to_string()).collect() };
        let rev_rows: Vec<f64> = (0..6).rev().flat_map(|t| psi.row(t).to_vec()).collect();
        let reversed = LabeledClip {
            psi: Tensor::new(vec![6, 3], rev_rows).unwrap(),
            labels: labels.iter().rev().map(|s| s.to_string()).collect(),
        };
        let a = extract_template(&[forward], EmotionLabel::Happy).unwrap();
        let b = extract_template(&[reversed], EmotionLabel::Happy).unwrap();
        for (x, y) in a.psi_temp.iter().zip(&b.psi_temp) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
