//! Checkpoint directory: `manifest.json` (names, shapes, dtype, format version,
//! training configuration) plus `params.bin`, the little-endian `f64` data of
//! every parameter concatenated in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ParamKind, ParameterStore};
use super::tape::Mat;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "params.bin";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub kind: ParamKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dtype: String,
    pub parameters: Vec<ParamEntry>,
    pub config: serde_json::Value,
}

pub fn save<C: Serialize>(dir: &Path, store: &ParameterStore, config: &C) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dtype: "float64-le".into(),
        parameters: store
            .iter()
            .map(|(_, p)| ParamEntry {
                name: p.name.clone(),
                shape: [p.value.nrows(), p.value.ncols()],
                kind: p.kind,
            })
            .collect(),
        config: serde_json::to_value(config)?,
    };
    let mut blob = Vec::with_capacity(store.num_scalars() * 8);
    for (_, p) in store.iter() {
        for v in p.value.iter() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    fs::write(dir.join(BLOB_FILE), blob)?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<(ParameterStore, Manifest)> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(manifest.format_version));
    }
    if manifest.dtype != "float64-le" {
        return Err(Error::Checkpoint(format!("unsupported dtype {}", manifest.dtype)));
    }
    let blob = fs::read(dir.join(BLOB_FILE))?;
    let expected: usize = manifest.parameters.iter().map(|p| p.shape[0] * p.shape[1] * 8).sum();
    if blob.len() != expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: blob.len(),
        });
    }
    let mut store = ParameterStore::new();
    let mut chunks = blob.chunks_exact(8);
    for entry in &manifest.parameters {
        let n = entry.shape[0] * entry.shape[1];
        let data: Vec<f64> = chunks
            .by_ref()
            .take(n)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let value = Mat::from_shape_vec((entry.shape[0], entry.shape[1]), data)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        store.add(entry.name.clone(), value, entry.kind);
    }
    Ok((store, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParameterStore::new();
        store.add("w", array![[0.1, -2.5e-300], [f64::MIN_POSITIVE, 3.0]], ParamKind::Weight);
        store.add("b", array![[1.0 / 3.0, -0.0]], ParamKind::Bias);
        save(dir.path(), &store, &serde_json::json!({"seq_len": 3})).unwrap();
        let (back, manifest) = load(dir.path()).unwrap();
        assert_eq!(manifest.config["seq_len"], 3);
        for ((_, a), (_, b)) in store.iter().zip(back.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.kind, b.kind);
            let bits = |m: &Mat| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParameterStore::new();
        store.add("w", Mat::ones((2, 2)), ParamKind::Weight);
        save(dir.path(), &store, &()).unwrap();
        let blob = fs::read(dir.path().join(BLOB_FILE)).unwrap();
        fs::write(dir.path().join(BLOB_FILE), &blob[..20]).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::TruncatedPayload { .. })));
    }
}
