//! Binary array container shared by head assets, parameter files, checkpoints
//! and emotion templates.
//!
//! Layout:
//!
//! ```text
//! b"ANIM3D\0"          7 bytes
//! version              u32 LE
//! header length        u64 LE
//! header               UTF-8 JSON
//! payload              f64 LE arrays, concatenated
//! ```
//!
//! The header lists every array as `{name, dtype, shape, offset}` with
//! `offset` in bytes from the start of the payload, plus a free-form `meta`
//! object. Integer-valued arrays (faces, indices) are stored as exact f64.

use std::fs;
use std::io::Write;
use std::path::Path;

use anim3d_numerics::Tensor;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CoreError, Result};

pub const MAGIC: &[u8; 7] = b"ANIM3D\0";
pub const VERSION: u32 = 1;
const DTYPE: &str = "f64";

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: Value,
    arrays: Vec<ArrayEntry>,
}

/// Named arrays in insertion order plus JSON metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub meta: Value,
    arrays: Vec<(String, Tensor)>,
}

impl Default for Container {
    fn default() -> Self {
        Container {
            meta: Value::Object(Default::default()),
            arrays: Vec::new(),
        }
    }
}

impl Container {
    /// Empty container whose metadata carries `"kind": kind`.
    pub fn with_kind(kind: &str) -> Self {
        let mut c = Container::default();
        c.set_meta("kind", Value::from(kind));
        c
    }

    pub fn set_meta(&mut self, key: &str, value: Value) {
        if let Value::Object(map) = &mut self.meta {
            map.insert(key.to_string(), value);
        }
    }

    pub fn meta_value(&self, key: &str) -> Option<&Value> {
        self.meta.get(key)
    }

    pub fn meta_f64(&self, key: &str) -> Result<f64> {
        self.meta
            .get(key)
            .and_then(Value::as_f64)
            .ok_or_else(|| CoreError::schema(key, "missing or non-numeric metadata"))
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize> {
        self.meta
            .get(key)
            .and_then(Value::as_u64)
            .map(|v| v as usize)
            .ok_or_else(|| CoreError::schema(key, "missing or non-integer metadata"))
    }

    pub fn kind(&self) -> Option<&str> {
        self.meta.get("kind").and_then(Value::as_str)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        match self.kind() {
            Some(k) if k == kind => Ok(()),
            other => Err(CoreError::schema(
                "kind",
                format!("expected `{kind}`, found {other:?}"),
            )),
        }
    }

    /// Adds or replaces an array.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        match self.arrays.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = tensor,
            None => self.arrays.push((name, tensor)),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CoreError::schema(name, "array missing"))
    }

    pub fn get_opt(&self, name: &str) -> Option<&Tensor> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Fetches an array and checks its shape; `None` entries match any size.
    pub fn get_shaped(&self, name: &str, shape: &[Option<usize>]) -> Result<&Tensor> {
        let t = self.get(name)?;
        let ok = t.ndim() == shape.len()
            && t.shape().iter().zip(shape).all(|(a, b)| b.is_none_or(|b| *a == b));
        if !ok {
            return Err(CoreError::schema(
                name,
                format!("shape {:?} does not match expected {shape:?}", t.shape()),
            ));
        }
        Ok(t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.iter().map(|(n, _)| n.as_str())
    }

    pub fn arrays(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.arrays.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let entries = self
            .arrays
            .iter()
            .map(|(name, t)| {
                let e = ArrayEntry {
                    name: name.clone(),
                    dtype: DTYPE.to_string(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += 8 * t.numel() as u64;
                e
            })
            .collect();
        let header = serde_json::to_vec(&Header {
            meta: self.meta.clone(),
            arrays: entries,
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(19 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &self.arrays {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 19 || &bytes[..7] != MAGIC {
            return Err(CoreError::schema("magic", "not an ANIM3D container"));
        }
        let version = u32::from_le_bytes(bytes[7..11].try_into().unwrap());
        if version != VERSION {
            return Err(CoreError::schema("version", format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[11..19].try_into().unwrap()) as usize;
        let payload_start = 19usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| CoreError::schema("header", "truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[19..payload_start])
            .map_err(|e| CoreError::schema("header", e.to_string()))?;
        let payload = &bytes[payload_start..];
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for e in header.arrays {
            if e.dtype != DTYPE {
                return Err(CoreError::schema(&e.name, format!("unsupported dtype {}", e.dtype)));
            }
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start
                .checked_add(8 * n)
                .filter(|&end| end <= payload.len())
                .ok_or_else(|| CoreError::schema(&e.name, "array extends past end of file"))?;
            let data = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(e.shape, data).map_err(|err| CoreError::schema(&e.name, err.to_string()))?;
            arrays.push((e.name, t));
        }
        Ok(Container {
            meta: header.meta,
            arrays,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
        Container::from_bytes(&bytes)
    }
}

/// Writes through a temporary sibling file and renames it into place, so a
/// reader never observes a partially written file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| CoreError::arg(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(
        ".{}.tmp-{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(CoreError::io(path, e));
    }
    Ok(())
}

/// Reads an index array stored as f64, checking every entry is a
/// non-negative integer below `bound`.
pub fn indices(name: &str, t: &Tensor, bound: usize) -> Result<Vec<usize>> {
    t.data()
        .iter()
        .map(|&v| {
            if v.fract() == 0.0 && v >= 0.0 && (v as usize) < bound {
                Ok(v as usize)
            } else {
                Err(CoreError::invalid(name, format!("index {v} outside [0, {bound})")))
            }
        })
        .collect()
}

pub fn index_tensor(shape: Vec<usize>, values: impl IntoIterator<Item = usize>) -> Tensor {
    Tensor::new(shape, values.into_iter().map(|v| v as f64).collect()).expect("index tensor shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_arrays_and_meta() {
        let mut c = Container::with_kind("test");
        c.set_meta("fps", Value::from(25.0));
        c.insert("a", Tensor::new(vec![2, 3], vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE, 0.0, 1e300]).unwrap());
        c.insert("empty", Tensor::zeros(vec![0, 4]));
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.meta_f64("fps").unwrap(), 25.0);
        assert_eq!(&c.to_bytes()[..7], b"ANIM3D\0");
    }

    #[test]
    fn truncated_payload_names_the_array() {
        let mut c = Container::with_kind("test");
        c.insert("weights", Tensor::ones(vec![10]));
        let bytes = c.to_bytes();
        let err = Container::from_bytes(&bytes[..bytes.len() - 8]).unwrap_err();
        assert!(err.to_string().contains("weights"), "{err}");
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(Container::from_bytes(b"not a container at all").is_err());
    }

    #[test]
    fn atomic_write_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        atomic_write(&path, b"hello").unwrap();
        atomic_write(&path, b"world").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"world");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
