//! Model persistence and seeded initialization.
//!
//! A model named `m` is stored as `m.manifest.json` (config, tensor table,
//! checksum) plus `m.weights.bin`, the little-endian `f64` values of every
//! tensor concatenated in manifest order. The checksum is the first eight
//! bytes of the SHA-256 of the blob, read as a big-endian integer and written
//! as 16 hex digits.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::vit::VitModel;

pub const FORMAT: &str = "sata-vit-f64-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the weights blob.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightManifest {
    pub format: String,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    pub checksum: String,
}

/// Manifest and blob paths for a model path given either as a bare prefix
/// (`out/m`) or as the manifest itself (`out/m.manifest.json`).
pub fn model_paths(path: &Path) -> (PathBuf, PathBuf) {
    let s = path.to_string_lossy();
    let prefix = s.strip_suffix(".manifest.json").unwrap_or(&s).to_string();
    (
        PathBuf::from(format!("{prefix}.manifest.json")),
        PathBuf::from(format!("{prefix}.weights.bin")),
    )
}

pub fn checksum(blob: &[u8]) -> u64 {
    let digest = Sha256::digest(blob);
    u64::from_be_bytes(digest[..8].try_into().unwrap())
}

fn encode(model: &VitModel) -> (Vec<TensorEntry>, Vec<u8>) {
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    for t in model.tensors() {
        entries.push(TensorEntry {
            name: t.name,
            shape: t.shape,
            offset: blob.len() as u64,
        });
        for v in t.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    (entries, blob)
}

/// Checksum of the serialized weights.
pub fn model_checksum(model: &VitModel) -> u64 {
    checksum(&encode(model).1)
}

pub fn save_model(model: &VitModel, path: &Path) -> Result<()> {
    let (manifest_path, blob_path) = model_paths(path);
    let (tensors, blob) = encode(model);
    let manifest = WeightManifest {
        format: FORMAT.to_string(),
        config: model.config.clone(),
        tensors,
        checksum: format!("{:016x}", checksum(&blob)),
    };
    if let Some(dir) = manifest_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))
}

pub fn load_model(path: &Path) -> Result<VitModel> {
    let (manifest_path, blob_path) = model_paths(path);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: WeightManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: manifest_path.clone(),
        reason: e.to_string(),
    })?;
    if manifest.format != FORMAT {
        return Err(Error::Schema(format!(
            "unsupported format {:?}, expected {FORMAT:?}",
            manifest.format
        )));
    }
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let actual = format!("{:016x}", checksum(&blob));
    if actual != manifest.checksum {
        return Err(Error::Corrupt {
            path: blob_path,
            reason: format!("checksum {actual} does not match manifest {}", manifest.checksum),
        });
    }
    decode(&manifest, &blob).map_err(|e| match e {
        Error::Corrupt { reason, .. } => Error::Corrupt {
            path: blob_path.clone(),
            reason,
        },
        other => other,
    })
}

fn decode(manifest: &WeightManifest, blob: &[u8]) -> Result<VitModel> {
    let mut model = VitModel::zeros(&manifest.config)?;
    let mut by_name: HashMap<&str, &TensorEntry> = HashMap::new();
    for t in &manifest.tensors {
        if by_name.insert(t.name.as_str(), t).is_some() {
            return Err(Error::Schema(format!("tensor {:?} listed twice", t.name)));
        }
    }
    check_extents(&manifest.tensors, blob.len())?;

    let mut used = 0;
    for slot in model.tensors_mut() {
        let entry = by_name
            .get(slot.name.as_str())
            .ok_or_else(|| Error::Schema(format!("missing tensor {:?}", slot.name)))?;
        if entry.shape != slot.shape {
            return Err(Error::Schema(format!(
                "tensor {:?} has shape {:?}, config requires {:?}",
                slot.name, entry.shape, slot.shape
            )));
        }
        let start = entry.offset as usize;
        let bytes = &blob[start..start + slot.data.len() * 8];
        for (dst, chunk) in slot.data.iter_mut().zip(bytes.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        used += 1;
    }
    if used != manifest.tensors.len() {
        let known: Vec<String> = model.tensors().into_iter().map(|t| t.name).collect();
        let extra = manifest
            .tensors
            .iter()
            .find(|t| !known.contains(&t.name))
            .map(|t| t.name.clone())
            .unwrap_or_default();
        return Err(Error::Schema(format!("unexpected tensor {extra:?}")));
    }
    Ok(model)
}

fn check_extents(tensors: &[TensorEntry], blob_len: usize) -> Result<()> {
    let mut spans: Vec<(u64, u64, &str)> = tensors
        .iter()
        .map(|t| {
            let len = t.shape.iter().product::<usize>() as u64 * 8;
            (t.offset, t.offset + len, t.name.as_str())
        })
        .collect();
    spans.sort_unstable();
    let mut prev_end = 0;
    for (start, end, name) in spans {
        if end > blob_len as u64 {
            return Err(Error::Corrupt {
                path: PathBuf::new(),
                reason: format!("tensor {name:?} extends past end of blob"),
            });
        }
        if start < prev_end {
            return Err(Error::Corrupt {
                path: PathBuf::new(),
                reason: format!("tensor {name:?} overlaps its predecessor"),
            });
        }
        prev_end = end;
    }
    Ok(())
}

/// Deterministic weights from [`SplitMix64`] seeded with `seed`.
///
/// Tensors are filled in canonical order, row-major. Layer-norm gains are 1,
/// biases (`*.b*`, `*.bias`) are 0, everything else is `normal() / sqrt(dim)`.
pub fn random_init(config: &ModelConfig, seed: u64) -> Result<VitModel> {
    let mut model = VitModel::zeros(config)?;
    let mut rng = SplitMix64::new(seed);
    let scale = 1.0 / (config.dim as f64).sqrt();
    for t in model.tensors_mut() {
        let leaf = t.name.rsplit('.').next().unwrap_or("");
        if leaf == "gain" {
            t.data.fill(1.0);
        } else if leaf.starts_with('b') {
            t.data.fill(0.0);
        } else {
            for v in t.data.iter_mut() {
                *v = rng.normal() * scale;
            }
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            depth: 2,
            dim: 8,
            heads: 2,
            ffn_ratio: 2.0,
            patch: 2,
            image: 4,
            channels: 1,
            num_classes: 3,
            ..Default::default()
        }
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let m = random_init(&small(), 3).unwrap();
        let p = dir.path().join("m");
        save_model(&m, &p).unwrap();
        let back = load_model(&dir.path().join("m.manifest.json")).unwrap();
        assert_eq!(back, m);
        for (a, b) in m.tensors().iter().zip(back.tensors()) {
            for (x, y) in a.data.iter().zip(b.data) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn truncated_blob_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m");
        save_model(&random_init(&small(), 3).unwrap(), &p).unwrap();
        let blob = dir.path().join("m.weights.bin");
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(load_model(&p), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn missing_tensor_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m");
        save_model(&random_init(&small(), 3).unwrap(), &p).unwrap();
        let mp = dir.path().join("m.manifest.json");
        let mut manifest: WeightManifest =
            serde_json::from_str(&fs::read_to_string(&mp).unwrap()).unwrap();
        manifest.tensors.retain(|t| t.name != "block0.ffn.w1");
        fs::write(&mp, serde_json::to_string(&manifest).unwrap()).unwrap();
        match load_model(&p) {
            Err(Error::Schema(msg)) => assert!(msg.contains("block0.ffn.w1"), "{msg}"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn overlapping_offsets_rejected() {
        let entries = vec![
            TensorEntry { name: "a".into(), shape: vec![2], offset: 0 },
            TensorEntry { name: "b".into(), shape: vec![2], offset: 8 },
        ];
        assert!(check_extents(&entries, 32).is_err());
        assert!(check_extents(&entries[..1], 8).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let c = small();
        let a = model_checksum(&random_init(&c, 42).unwrap());
        let b = model_checksum(&random_init(&c, 42).unwrap());
        let other = model_checksum(&random_init(&c, 43).unwrap());
        assert_eq!(a, b);
        assert_ne!(a, other);
    }

    #[test]
    fn init_scale_matches_dim() {
        let c = ModelConfig {
            dim: 8,
            heads: 2,
            ..Default::default()
        };
        let m = random_init(&c, 42).unwrap();
        let w = &m.blocks[0].ffn.fc1.weight;
        let (mean, std) = crate::tensor::mean_std(w.data());
        let target = 1.0 / 8f64.sqrt();
        assert!(mean.abs() < 0.05);
        assert!((std - target).abs() < 0.2 * target, "std {std}");
        assert_eq!(m.blocks[0].norm1.gain, vec![1.0; 8]);
        assert_eq!(m.blocks[0].ffn.fc1.bias, vec![0.0; 32]);
    }

    #[test]
    fn paths_accept_prefix_or_manifest() {
        let (m, b) = model_paths(Path::new("x/y.manifest.json"));
        assert_eq!(m, PathBuf::from("x/y.manifest.json"));
        assert_eq!(b, PathBuf::from("x/y.weights.bin"));
        assert_eq!(model_paths(Path::new("x/y")).0, m);
    }
}
