//! Network weights as a JSON manifest plus a raw sample blob.
//!
//! The manifest records each parameter's name, shape, and element span;
//! the blob holds every parameter back to back as little-endian f32.
//! Values quantize from f64 once on save, so save, load, save again is
//! byte-identical.

use super::IoError;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Element offset into the blob.
    pub offset: usize,
    /// Element count; always the product of `shape`.
    pub len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightsManifest {
    pub entries: Vec<WeightEntry>,
    pub dtype: String,
    pub byte_order: String,
}

pub fn save_weights(
    params: &[(String, &Tensor)],
    manifest_path: &Path,
    blob_path: &Path,
) -> Result<(), IoError> {
    let mut entries = Vec::with_capacity(params.len());
    let mut blob = Vec::new();
    let mut offset = 0usize;
    for (name, tensor) in params {
        let len = tensor.numel();
        entries.push(WeightEntry {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
            offset,
            len,
        });
        for &v in tensor.data() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
        offset += len;
    }
    let manifest =
        WeightsManifest { entries, dtype: "f32".into(), byte_order: "le".into() };
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(manifest_path, text).map_err(|e| IoError::io(manifest_path, e))?;
    fs::write(blob_path, blob).map_err(|e| IoError::io(blob_path, e))
}

pub fn load_weights(
    manifest_path: &Path,
    blob_path: &Path,
) -> Result<Vec<(String, Tensor)>, IoError> {
    let text = fs::read_to_string(manifest_path).map_err(|e| IoError::io(manifest_path, e))?;
    let manifest: WeightsManifest = serde_json::from_str(&text)?;
    if manifest.dtype != "f32" {
        return Err(IoError::Format(format!("unsupported dtype {:?}", manifest.dtype)));
    }
    if manifest.byte_order != "le" {
        return Err(IoError::Format(format!("unsupported byte order {:?}", manifest.byte_order)));
    }
    let blob = fs::read(blob_path).map_err(|e| IoError::io(blob_path, e))?;
    let total: usize = manifest.entries.iter().map(|e| e.len).sum();
    if blob.len() != total * 4 {
        return Err(IoError::Format(format!(
            "blob holds {} bytes, manifest expects {}",
            blob.len(),
            total * 4
        )));
    }
    let mut out = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let numel: usize = entry.shape.iter().product();
        if numel != entry.len {
            return Err(IoError::Format(format!(
                "entry {:?}: shape {:?} holds {numel} values, len says {}",
                entry.name, entry.shape, entry.len
            )));
        }
        let start = entry
            .offset
            .checked_mul(4)
            .filter(|&s| s + entry.len * 4 <= blob.len())
            .ok_or_else(|| {
                IoError::Format(format!("entry {:?} spans past the blob", entry.name))
            })?;
        let data = blob[start..start + entry.len * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let tensor = Tensor::from_vec(&entry.shape, data)
            .map_err(|e| IoError::Format(e.to_string()))?;
        out.push((entry.name.clone(), tensor));
    }
    Ok(out)
}

/// Copies loaded weights into live parameters, matching by name.
///
/// Every target must be found and every loaded entry must be used;
/// shapes must agree exactly.
pub fn store_weights(
    loaded: &[(String, Tensor)],
    targets: &mut [(String, &mut Tensor)],
) -> Result<(), IoError> {
    if loaded.len() != targets.len() {
        return Err(IoError::Invalid(format!(
            "loaded {} parameters, network has {}",
            loaded.len(),
            targets.len()
        )));
    }
    for (name, target) in targets.iter_mut() {
        let (_, source) = loaded
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| IoError::Invalid(format!("no weights for parameter {name:?}")))?;
        if source.shape() != target.shape() {
            return Err(IoError::Invalid(format!(
                "parameter {name:?}: file shape {:?}, network shape {:?}",
                source.shape(),
                target.shape()
            )));
        }
        target.data_mut().copy_from_slice(source.data());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{LabelEmbedder, NetworkRole, NetworkSpec};

    fn toy_params() -> LabelEmbedder {
        let spec = NetworkSpec::toy(NetworkRole::LabelEmbed, 4, 11);
        LabelEmbedder::new(&spec).unwrap()
    }

    #[test]
    fn save_load_round_trips_names_shapes_and_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let (mp, bp) = (dir.path().join("w.json"), dir.path().join("w.bin"));
        let net = toy_params();
        let params = net.parameters();
        save_weights(&params, &mp, &bp).unwrap();
        let loaded = load_weights(&mp, &bp).unwrap();
        assert_eq!(loaded.len(), params.len());
        for ((ln, lt), (pn, pt)) in loaded.iter().zip(&params) {
            assert_eq!(ln, pn);
            assert_eq!(lt.shape(), pt.shape());
            for (&a, &b) in lt.data().iter().zip(pt.data()) {
                assert_eq!(a, b as f32 as f64);
            }
        }
    }

    #[test]
    fn second_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (mp, bp) = (dir.path().join("w.json"), dir.path().join("w.bin"));
        let net = toy_params();
        save_weights(&net.parameters(), &mp, &bp).unwrap();
        let (m1, b1) = (fs::read(&mp).unwrap(), fs::read(&bp).unwrap());
        let loaded = load_weights(&mp, &bp).unwrap();
        let pairs: Vec<(String, &Tensor)> =
            loaded.iter().map(|(n, t)| (n.clone(), t)).collect();
        save_weights(&pairs, &mp, &bp).unwrap();
        assert_eq!(fs::read(&mp).unwrap(), m1);
        assert_eq!(fs::read(&bp).unwrap(), b1);
    }

    #[test]
    fn store_restores_a_zeroed_network() {
        let dir = tempfile::tempdir().unwrap();
        let (mp, bp) = (dir.path().join("w.json"), dir.path().join("w.bin"));
        let mut net = toy_params();
        save_weights(&net.parameters(), &mp, &bp).unwrap();
        for (_, t) in net.parameters_mut() {
            t.data_mut().fill(0.0);
        }
        let loaded = load_weights(&mp, &bp).unwrap();
        store_weights(&loaded, &mut net.parameters_mut()).unwrap();
        for ((_, got), (_, want)) in net.parameters().iter().zip(&loaded) {
            assert_eq!(got.data(), want.data());
        }
    }

    #[test]
    fn missing_and_mismatched_parameters_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (mp, bp) = (dir.path().join("w.json"), dir.path().join("w.bin"));
        let mut net = toy_params();
        save_weights(&net.parameters(), &mp, &bp).unwrap();
        let mut loaded = load_weights(&mp, &bp).unwrap();
        loaded[0].0 = "nonexistent".into();
        assert!(matches!(
            store_weights(&loaded, &mut net.parameters_mut()),
            Err(IoError::Invalid(_))
        ));
        let mut wrong_shape = load_weights(&mp, &bp).unwrap();
        wrong_shape[0].1 = Tensor::zeros(&[1, 1, 1, 1]);
        assert!(matches!(
            store_weights(&wrong_shape, &mut net.parameters_mut()),
            Err(IoError::Invalid(_))
        ));
    }

    #[test]
    fn corrupt_manifest_spans_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (mp, bp) = (dir.path().join("w.json"), dir.path().join("w.bin"));
        let manifest = WeightsManifest {
            entries: vec![WeightEntry {
                name: "w".into(),
                shape: vec![2],
                offset: 1,
                len: 2,
            }],
            dtype: "f32".into(),
            byte_order: "le".into(),
        };
        fs::write(&mp, serde_json::to_string(&manifest).unwrap()).unwrap();
        fs::write(&bp, [0u8; 8]).unwrap();
        assert!(matches!(load_weights(&mp, &bp), Err(IoError::Format(_))));
    }
}
