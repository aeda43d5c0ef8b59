use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anim3d_numerics::Tensor;

use super::Mesh;
use crate::container::atomic_write;
use crate::error::{CoreError, Result};

/// Wavefront OBJ text: `v` lines with six decimals, then 1-indexed `f` lines.
pub fn obj_string(mesh: &Mesh) -> String {
    let mut out = String::with_capacity(40 * mesh.n_vertices() + 24 * mesh.faces.len());
    for v in 0..mesh.n_vertices() {
        let [x, y, z] = mesh.vertex(v);
        writeln!(out, "v {x:.6} {y:.6} {z:.6}").unwrap();
    }
    for f in mesh.faces.iter() {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    out
}

pub fn export_obj(mesh: &Mesh, path: &Path) -> Result<()> {
    atomic_write(path, obj_string(mesh).as_bytes())
}

/// Reads the `v` lines of an OBJ file as an `[n, 3]` tensor.
pub fn read_obj_vertices(path: &Path) -> Result<Tensor> {
    let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    let mut data = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        if parts.next() != Some("v") {
            continue;
        }
        let coords: Vec<f64> = parts
            .take(3)
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CoreError::schema("obj", format!("line {}: {e}", i + 1)))?;
        if coords.len() != 3 {
            return Err(CoreError::schema("obj", format!("line {}: expected 3 coordinates", i + 1)));
        }
        data.extend(coords);
    }
    let n = data.len() / 3;
    Ok(Tensor::new(vec![n, 3], data)?)
}
