#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use anim3d_core::audio::{write_wav, Waveform};

pub fn anim3d(args: &[&str]) -> Output {
    anim3d_env(args, &[])
}

pub fn anim3d_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_anim3d"));
    cmd.args(args).env_remove("ANIM3D_SEED").env("RUST_LOG", "warn");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

/// Runs the binary and fails the test with its stderr on a nonzero exit.
pub fn ok(args: &[&str]) -> String {
    let out = anim3d(args);
    assert!(
        out.status.success(),
        "anim3d {args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn code(args: &[&str]) -> i32 {
    anim3d(args).status.code().expect("exit code")
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// A chirp-plus-tone test signal at a non-native sample rate.
pub fn write_test_wav(path: &Path, seconds: f64, rate: u32) {
    let n = (seconds * rate as f64).round() as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / rate as f64;
            0.3 * (2.0 * std::f64::consts::PI * (200.0 + 300.0 * t) * t).sin()
                + 0.1 * (2.0 * std::f64::consts::PI * 1500.0 * t).sin()
        })
        .collect();
    write_wav(&Waveform::new(samples, rate).unwrap(), path).unwrap();
}

pub fn obj_vertex_count(path: &Path) -> usize {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| l.starts_with("v "))
        .count()
}
