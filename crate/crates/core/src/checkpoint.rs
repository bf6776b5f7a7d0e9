//! Single-file checkpoints: `DCKP` magic, version, manifest length, a JSON
//! manifest of named tensors, then one little-endian f32 blob.

use crate::error::{Error, Result};
use crate::formats;
use crate::model::{Model, ModelConfig, ModelParams};
use crate::params::{Params, Tensor};
use crate::training::AdamW;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"DCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the blob.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub step: u64,
    pub config: ModelConfig,
    pub config_hash: String,
    pub optimizer_step: Option<u64>,
    pub entries: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub step: u64,
    pub optimizer: Option<AdamW<f32>>,
}

fn push_tensors(prefix: &str, p: &ModelParams<f32>, entries: &mut Vec<TensorEntry>, blob: &mut Vec<u8>) {
    for (name, t) in p.named() {
        entries.push(TensorEntry {
            name: format!("{prefix}{name}"),
            shape: t.shape.clone(),
            dtype: "f32".into(),
            offset: blob.len() as u64,
        });
        for v in &t.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn to_bytes(model: &Model<f32>, step: u64, optimizer: Option<&AdamW<f32>>) -> Result<Vec<u8>> {
    let mut entries = Vec::new();
    let mut blob = Vec::with_capacity(model.params.param_count() * 4);
    push_tensors("", &model.params, &mut entries, &mut blob);
    if let Some(opt) = optimizer {
        push_tensors("adam.m.", &opt.m, &mut entries, &mut blob);
        push_tensors("adam.v.", &opt.v, &mut entries, &mut blob);
    }
    let manifest = CheckpointManifest {
        version: VERSION,
        step,
        config: model.config.clone(),
        config_hash: model.config.hash(),
        optimizer_step: optimizer.map(|o| o.step),
        entries,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(16 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Format { what: "checkpoint", reason: reason.into() }
}

/// Parses the header and manifest, returning the blob that follows.
pub fn read_manifest(buf: &[u8]) -> Result<(CheckpointManifest, &[u8])> {
    if buf.len() < 16 || &buf[..4] != MAGIC {
        return Err(Error::BadCheckpointHeader);
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion { what: "checkpoint", found: version, expected: VERSION });
    }
    let len = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
    let end = 16usize.checked_add(len).filter(|&e| e <= buf.len()).ok_or_else(|| bad("truncated manifest"))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&buf[16..end])?;
    if manifest.version != VERSION {
        return Err(Error::UnsupportedVersion { what: "checkpoint manifest", found: manifest.version, expected: VERSION });
    }
    if manifest.config_hash != manifest.config.hash() {
        return Err(Error::ConfigHashMismatch { expected: manifest.config.hash(), found: manifest.config_hash });
    }
    Ok((manifest, &buf[end..]))
}

fn fill(prefix: &str, p: &mut ModelParams<f32>, index: &HashMap<&str, &TensorEntry>, blob: &[u8]) -> Result<()> {
    let mut err = None;
    p.visit_mut("", &mut |name, t: &mut Tensor<f32>| {
        if err.is_some() {
            return;
        }
        let full = format!("{prefix}{name}");
        let Some(e) = index.get(full.as_str()) else {
            err = Some(bad(format!("missing tensor `{full}`")));
            return;
        };
        if e.shape != t.shape || e.dtype != "f32" {
            err = Some(Error::ShapeMismatch(format!("`{full}`: stored {:?} {}, expected {:?} f32", e.shape, e.dtype, t.shape)));
            return;
        }
        let start = e.offset as usize;
        let Some(bytes) = blob.get(start..start + t.data.len() * 4) else {
            err = Some(bad(format!("tensor `{full}` runs past the end of the blob")));
            return;
        };
        for (v, c) in t.data.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes(c.try_into().unwrap());
        }
    });
    err.map_or(Ok(()), Err)
}

pub fn from_bytes(buf: &[u8]) -> Result<Checkpoint> {
    let (manifest, blob) = read_manifest(buf)?;
    manifest.config.validate()?;
    let index: HashMap<&str, &TensorEntry> = manifest.entries.iter().map(|e| (e.name.as_str(), e)).collect();
    let mut model = Model::<f32>::init(manifest.config.clone(), 0)?;
    fill("", &mut model.params, &index, blob)?;
    let optimizer = match manifest.optimizer_step {
        None => None,
        Some(step) => {
            let mut opt = AdamW::new(&model);
            opt.step = step;
            fill("adam.m.", &mut opt.m, &index, blob)?;
            fill("adam.v.", &mut opt.v, &index, blob)?;
            Some(opt)
        }
    };
    Ok(Checkpoint { model, step: manifest.step, optimizer })
}

pub fn save(path: &Path, model: &Model<f32>, step: u64, optimizer: Option<&AdamW<f32>>) -> Result<()> {
    formats::write_file(path, &to_bytes(model, step, optimizer)?)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    from_bytes(&formats::read_file(path)?)
}

/// Loads a checkpoint and checks that it was written for `expected`.
pub fn load_for(path: &Path, expected: &ModelConfig) -> Result<Checkpoint> {
    let ck = load(path)?;
    if ck.model.config.hash() != expected.hash() {
        return Err(Error::ConfigHashMismatch { expected: expected.hash(), found: ck.model.config.hash() });
    }
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::PromptConfig;
    use crate::stpt::StptConfig;

    fn tiny() -> ModelConfig {
        ModelConfig {
            stpt: StptConfig { layers: 1, channels: 8, heads: 2, vocab: 6, frames: 2, grid_h: 2, grid_w: 2, ..Default::default() },
            prompt: PromptConfig { text_len: 2, text_vocab: 8, text_channels: 4 },
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let model = Model::<f32>::init(tiny(), 9).unwrap();
        let mut opt = AdamW::new(&model);
        opt.step = 17;
        opt.m.stpt.head.b.data[1] = 0.25;
        opt.v.prompt.null_action.data[0] = f32::MIN_POSITIVE;
        let bytes = to_bytes(&model, 42, Some(&opt)).unwrap();
        let ck = from_bytes(&bytes).unwrap();
        assert_eq!(ck.step, 42);
        assert_eq!(ck.optimizer.as_ref(), Some(&opt));
        for ((a, x), (b, y)) in ck.model.params.named().iter().zip(model.params.named()) {
            assert_eq!(a, &b);
            assert!(x.data.iter().zip(&y.data).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
        let (m, _) = read_manifest(&bytes).unwrap();
        assert_eq!(m.config_hash, tiny().hash());
        assert_eq!(m.entries[0].offset, 0);
        assert!(m.entries.iter().any(|e| e.name.starts_with("adam.v.")));
    }

    #[test]
    fn header_and_hash_errors() {
        let model = Model::<f32>::init(tiny(), 1).unwrap();
        let mut bytes = to_bytes(&model, 0, None).unwrap();
        assert!(from_bytes(&bytes).unwrap().optimizer.is_none());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(from_bytes(&wrong), Err(Error::BadCheckpointHeader)));
        assert_eq!(from_bytes(&wrong).unwrap_err().to_string(), "bad checkpoint header");
        bytes.truncate(bytes.len() - 3);
        assert!(from_bytes(&bytes).is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.dckp");
        save(&path, &model, 3, None).unwrap();
        let mut other = tiny();
        other.stpt.layers = 2;
        match load_for(&path, &other) {
            Err(Error::ConfigHashMismatch { expected, found }) => {
                assert_eq!(expected, other.hash());
                assert_eq!(found, tiny().hash());
            }
            r => panic!("unexpected {r:?}"),
        }
    }
}
