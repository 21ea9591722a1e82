//! Flat tensor container: `manifest.json` (names, shapes, offsets, free-form
//! metadata) next to `tensors.bin` holding little-endian `f32` values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Tensor;

pub const CHECKPOINT_FORMAT: &str = "trls-tensors-v1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAYLOAD_FILE: &str = "tensors.bin";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the payload, in `f32` elements.
    pub offset: usize,
    pub count: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorManifest {
    pub format: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_tensors(dir: &Path, meta: serde_json::Value, tensors: &[(String, &Tensor)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut payload = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0;
    for (name, t) in tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
            count: t.numel(),
        });
        for v in t.data() {
            payload.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        offset += t.numel();
    }
    let manifest = TensorManifest {
        format: CHECKPOINT_FORMAT.to_string(),
        meta,
        tensors: entries,
    };
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;
    let ppath = dir.join(PAYLOAD_FILE);
    fs::write(&ppath, payload).map_err(|e| Error::io(&ppath, e))?;
    Ok(())
}

pub fn load_tensors(dir: &Path) -> Result<(TensorManifest, Vec<(String, Tensor)>)> {
    let mpath = dir.join(MANIFEST_FILE);
    let raw = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: TensorManifest = serde_json::from_slice(&raw).map_err(|e| Error::format(&mpath, e.to_string()))?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::format(&mpath, format!("unknown format `{}`", manifest.format)));
    }
    let ppath = dir.join(PAYLOAD_FILE);
    let bytes = fs::read(&ppath).map_err(|e| Error::io(&ppath, e))?;
    let expected: usize = manifest.tensors.iter().map(|t| t.count).sum::<usize>() * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            &ppath,
            format!("payload has {} bytes, manifest describes {expected}", bytes.len()),
        ));
    }
    let floats: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let mut out = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        if e.shape.iter().product::<usize>() != e.count || e.offset + e.count > floats.len() {
            return Err(Error::format(&mpath, format!("bad entry for `{}`", e.name)));
        }
        let t = Tensor::new(e.shape.clone(), floats[e.offset..e.offset + e.count].to_vec())?;
        out.push((e.name.clone(), t));
    }
    Ok((manifest, out))
}
