//! On-disk checkpoints.
//!
//! A checkpoint is a directory holding `manifest.json` and `tensors.bin`.
//! The payload is the concatenation of one row-major little-endian `f64`
//! blob per tensor; the manifest lists each tensor's name, shape, byte
//! offset, byte length and SHA-256, plus a digest of the model config it
//! was produced under.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapter::AdapterParams;
use crate::error::{Error, Result};
use crate::model::{BaseModelParams, ModelConfig};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAYLOAD_FILE: &str = "tensors.bin";
pub const ELEMENT_TYPE: &str = "f64-le";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Base,
    Adapter,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub dtype: String,
    pub offset: u64,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: CheckpointKind,
    pub model: ModelConfig,
    pub config_digest: String,
    /// Digest of the base payload an adapter was trained against.
    pub base_payload_digest: Option<String>,
    pub payload_sha256: String,
    pub tensors: Vec<TensorEntry>,
    /// Configuration of the producing run.
    pub snapshot: serde_json::Value,
}

fn hex_sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of the canonical JSON encoding of a model config.
pub fn config_digest(config: &ModelConfig) -> String {
    hex_sha256(&serde_json::to_vec(config).expect("config serializes"))
}

/// SHA-256 of a checkpoint's payload file.
pub fn payload_digest(dir: &Path) -> Result<String> {
    let path = dir.join(PAYLOAD_FILE);
    Ok(hex_sha256(
        &fs::read(&path).map_err(|e| Error::io(&path, e))?,
    ))
}

fn encode(tensors: &[(String, &Array2<f64>)]) -> (Vec<u8>, Vec<TensorEntry>) {
    let mut payload = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        let start = payload.len();
        for v in t.iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(TensorEntry {
            name: name.clone(),
            shape: [t.nrows(), t.ncols()],
            dtype: ELEMENT_TYPE.into(),
            offset: start as u64,
            bytes: (payload.len() - start) as u64,
            sha256: hex_sha256(&payload[start..]),
        });
    }
    (payload, entries)
}

fn write(dir: &Path, manifest: &Manifest, payload: &[u8]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join(PAYLOAD_FILE);
    fs::write(&p, payload).map_err(|e| Error::io(&p, e))?;
    let m = dir.join(MANIFEST_FILE);
    fs::write(&m, serde_json::to_vec_pretty(manifest)?).map_err(|e| Error::io(&m, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let m = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&m).map_err(|e| Error::io(&m, e))?;
    let manifest: Manifest = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Corruption(format!("{}: {e}", m.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Compatibility {
            detail: format!("format version {}", manifest.format_version),
            expected: FORMAT_VERSION.to_string(),
            found: manifest.format_version.to_string(),
        });
    }
    Ok(manifest)
}

/// Verified tensors of a checkpoint, in manifest order.
fn read_tensors(dir: &Path, manifest: &Manifest) -> Result<Vec<(String, Array2<f64>)>> {
    let p = dir.join(PAYLOAD_FILE);
    let payload = fs::read(&p).map_err(|e| Error::io(&p, e))?;
    let expected: u64 = manifest.tensors.iter().map(|t| t.bytes).sum();
    if payload.len() as u64 != expected {
        return Err(Error::Corruption(format!(
            "payload holds {} bytes, manifest lists {expected}",
            payload.len()
        )));
    }
    if hex_sha256(&payload) != manifest.payload_sha256 {
        return Err(Error::Corruption("payload digest mismatch".into()));
    }
    manifest
        .tensors
        .iter()
        .map(|t| {
            let [rows, cols] = t.shape;
            let (start, len) = (t.offset as usize, t.bytes as usize);
            if t.dtype != ELEMENT_TYPE || len != rows * cols * 8 || start + len > payload.len() {
                return Err(Error::Corruption(format!(
                    "tensor {} has an invalid entry",
                    t.name
                )));
            }
            let blob = &payload[start..start + len];
            if hex_sha256(blob) != t.sha256 {
                return Err(Error::Corruption(format!(
                    "tensor {} digest mismatch",
                    t.name
                )));
            }
            let data = blob
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let array = Array2::from_shape_vec((rows, cols), data)
                .map_err(|e| Error::Corruption(e.to_string()))?;
            Ok((t.name.clone(), array))
        })
        .collect()
}

fn expect_kind(manifest: &Manifest, kind: CheckpointKind) -> Result<()> {
    if manifest.kind != kind {
        return Err(Error::Compatibility {
            detail: "wrong checkpoint kind".into(),
            expected: format!("{kind:?}").to_lowercase(),
            found: format!("{:?}", manifest.kind).to_lowercase(),
        });
    }
    Ok(())
}

pub fn save_base(
    params: &BaseModelParams,
    dir: &Path,
    snapshot: serde_json::Value,
) -> Result<Manifest> {
    let (payload, tensors) = encode(&params.named_tensors());
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        kind: CheckpointKind::Base,
        model: params.config,
        config_digest: config_digest(&params.config),
        base_payload_digest: None,
        payload_sha256: hex_sha256(&payload),
        tensors,
        snapshot,
    };
    write(dir, &manifest, &payload)?;
    Ok(manifest)
}

pub fn load_base(dir: &Path) -> Result<(BaseModelParams, Manifest)> {
    let manifest = read_manifest(dir)?;
    expect_kind(&manifest, CheckpointKind::Base)?;
    if config_digest(&manifest.model) != manifest.config_digest {
        return Err(Error::Corruption(
            "config digest does not match the stored config".into(),
        ));
    }
    let tensors = read_tensors(dir, &manifest)?;
    let mut params = BaseModelParams::init(&manifest.model, &mut crate::rng::seeded(0))?;
    params.assign(&tensors).map_err(|e| Error::Compatibility {
        detail: e.to_string(),
        expected: manifest.config_digest.clone(),
        found: manifest.config_digest.clone(),
    })?;
    Ok((params, manifest))
}

/// Store an adapter together with the identity of the base it belongs to.
pub fn save_adapter(
    adapter: &AdapterParams,
    base: &Manifest,
    dir: &Path,
    snapshot: serde_json::Value,
) -> Result<Manifest> {
    adapter.check_compatible(&base.model)?;
    let (payload, tensors) = encode(&adapter.named_tensors());
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        kind: CheckpointKind::Adapter,
        model: base.model,
        config_digest: base.config_digest.clone(),
        base_payload_digest: Some(base.payload_sha256.clone()),
        payload_sha256: hex_sha256(&payload),
        tensors,
        snapshot,
    };
    write(dir, &manifest, &payload)?;
    Ok(manifest)
}

/// Load an adapter on its own; with `base` given, also check that it was
/// trained against that base.
pub fn load_adapter(dir: &Path, base: Option<&Manifest>) -> Result<(AdapterParams, Manifest)> {
    let manifest = read_manifest(dir)?;
    expect_kind(&manifest, CheckpointKind::Adapter)?;
    if let Some(base) = base {
        if base.config_digest != manifest.config_digest {
            return Err(Error::Compatibility {
                detail: "adapter was trained for a different model config".into(),
                expected: base.config_digest.clone(),
                found: manifest.config_digest.clone(),
            });
        }
        if manifest.base_payload_digest.as_deref() != Some(base.payload_sha256.as_str()) {
            return Err(Error::Compatibility {
                detail: "adapter was trained against different base weights".into(),
                expected: base.payload_sha256.clone(),
                found: manifest.base_payload_digest.clone().unwrap_or_default(),
            });
        }
    }
    let mut tensors = read_tensors(dir, &manifest)?.into_iter();
    let mut take = |name: &str| match tensors.next() {
        Some((n, t)) if n == name => Ok(t),
        other => Err(Error::Corruption(format!(
            "expected tensor {name}, found {:?}",
            other.map(|(n, _)| n)
        ))),
    };
    let adapter = AdapterParams {
        tokens: take("adapter.tokens")?,
        w_k: take("adapter.w_k")?,
        w_v: take("adapter.w_v")?,
    };
    adapter
        .check_compatible(&manifest.model)
        .map_err(|e| Error::Compatibility {
            detail: e.to_string(),
            expected: manifest.config_digest.clone(),
            found: manifest.config_digest.clone(),
        })?;
    Ok((adapter, manifest))
}
