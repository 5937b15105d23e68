//! Binary checkpoint: magic, manifest length, JSON manifest, f32 payload.
//!
//! Layout: `ACDLCKPT1\n`, a little-endian `u64` manifest length, the UTF-8
//! JSON manifest, then every parameter's values as little-endian `f32`,
//! concatenated in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{build, Architecture, ModelGraph};

pub const MAGIC: &[u8; 10] = b"ACDLCKPT1\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Offset into the payload, in elements.
    pub offset: usize,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub architecture: Architecture,
    pub parameters: Vec<ParamEntry>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

impl Manifest {
    pub fn payload_len(&self) -> usize {
        self.parameters.iter().map(|p| p.shape.iter().product::<usize>()).sum()
    }
}

pub fn encode(model: &ModelGraph, metadata: serde_json::Value) -> Result<Vec<u8>> {
    let mut parameters = Vec::with_capacity(model.params.len());
    let mut payload = Vec::new();
    let mut offset = 0;
    for p in model.params.iter() {
        parameters.push(ParamEntry {
            name: p.name.clone(),
            shape: p.tensor.shape().to_vec(),
            dtype: "f32".into(),
            offset,
            trainable: p.trainable,
        });
        offset += p.tensor.numel();
        for v in p.tensor.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        architecture: model.architecture.clone(),
        parameters,
        metadata,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parses the manifest and checks it against the payload length.
pub fn read_manifest(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("bad magic; not an acdl checkpoint".into()));
    }
    let rest = &bytes[MAGIC.len()..];
    let len_bytes: [u8; 8] = rest
        .get(..8)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| Error::Checkpoint("truncated before manifest length".into()))?;
    let len = usize::try_from(u64::from_le_bytes(len_bytes))
        .map_err(|_| Error::Checkpoint("manifest length overflows".into()))?;
    let rest = &rest[8..];
    if rest.len() < len {
        return Err(Error::Checkpoint(format!(
            "truncated manifest: expected {len} bytes, found {}",
            rest.len()
        )));
    }
    let manifest: Manifest = serde_json::from_slice(&rest[..len])
        .map_err(|e| Error::Checkpoint(format!("unreadable manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {} is not supported (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let payload = &rest[len..];
    let expected = manifest.payload_len() * 4;
    if payload.len() != expected {
        return Err(Error::Integrity(format!(
            "manifest describes {} floats ({expected} bytes) but payload has {} bytes",
            manifest.payload_len(),
            payload.len()
        )));
    }
    let mut offset = 0;
    for p in &manifest.parameters {
        if p.dtype != "f32" {
            return Err(Error::Checkpoint(format!("parameter {} has dtype {}", p.name, p.dtype)));
        }
        if p.offset != offset {
            return Err(Error::Integrity(format!("parameter {} starts at {} not {offset}", p.name, p.offset)));
        }
        offset += p.shape.iter().product::<usize>();
    }
    Ok((manifest, payload))
}

/// Rebuilds the architecture and overwrites every parameter by name.
pub fn decode(bytes: &[u8]) -> Result<(ModelGraph, serde_json::Value)> {
    let (manifest, payload) = read_manifest(bytes)?;
    let mut model = build(&manifest.architecture, 0)?;
    if model.params.len() != manifest.parameters.len() {
        return Err(Error::Integrity(format!(
            "architecture has {} parameters, checkpoint has {}",
            model.params.len(),
            manifest.parameters.len()
        )));
    }
    for entry in &manifest.parameters {
        let param = model
            .params
            .get_mut(&entry.name)
            .map_err(|_| Error::Integrity(format!("unknown parameter {}", entry.name)))?;
        if param.tensor.shape() != entry.shape.as_slice() {
            return Err(Error::Integrity(format!(
                "parameter {} has shape {:?}, checkpoint says {:?}",
                entry.name,
                param.tensor.shape(),
                entry.shape
            )));
        }
        let start = entry.offset * 4;
        let bytes = &payload[start..start + param.tensor.numel() * 4];
        for (dst, chunk) in param.tensor.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        }
        if !param.tensor.is_finite() {
            return Err(Error::Integrity(format!("parameter {} holds non-finite values", entry.name)));
        }
        param.trainable = entry.trainable;
    }
    Ok((model, manifest.metadata))
}

pub fn save_checkpoint(model: &ModelGraph, path: &Path, metadata: serde_json::Value) -> Result<()> {
    std::fs::write(path, encode(model, metadata)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelGraph, serde_json::Value)> {
    if !path.is_file() {
        return Err(Error::Checkpoint(format!("missing checkpoint {}", path.display())));
    }
    decode(&std::fs::read(path)?)
}
