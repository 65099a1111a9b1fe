//! Model file: magic, version, JSON header, little-endian `f32` blob.
//!
//! ```text
//! "HYPLNPPO" | u32 version | u32 header_len | header JSON | f32 LE × n
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchConfig, LearnerError, Network, TensorInfo};
use crate::scalar::Real;

pub const MODEL_MAGIC: &[u8; 8] = b"HYPLNPPO";
pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ModelMeta {
    #[serde(default)]
    pub training_seconds: f64,
    #[serde(default)]
    pub scenes_seen: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: ArchConfig,
    tensors: Vec<TensorInfo>,
    #[serde(default)]
    meta: ModelMeta,
}

pub fn save_params<T: Real>(net: &Network<T>, meta: &ModelMeta, path: &Path) -> Result<(), LearnerError> {
    let header = Header { arch: net.arch.clone(), tensors: net.tensors.clone(), meta: meta.clone() };
    let json = serde_json::to_vec(&header).map_err(|e| LearnerError::CorruptFile(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + 4 * net.num_params());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in &net.params {
        out.extend_from_slice(&(p.as_f64() as f32).to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize) -> Result<&'a [u8], LearnerError> {
    let end = at.checked_add(n).filter(|e| *e <= bytes.len());
    let end = end.ok_or_else(|| LearnerError::CorruptFile(format!("truncated at byte {}", *at)))?;
    let s = &bytes[*at..end];
    *at = end;
    Ok(s)
}

fn read_u32(bytes: &[u8], at: &mut usize) -> Result<u32, LearnerError> {
    Ok(u32::from_le_bytes(take(bytes, at, 4)?.try_into().expect("4 bytes")))
}

/// Loads a model; with `expected` set, the stored architecture must match.
pub fn load_params<T: Real>(
    path: &Path,
    expected: Option<&ArchConfig>,
) -> Result<(Network<T>, ModelMeta), LearnerError> {
    let bytes = fs::read(path)?;
    let mut at = 0;
    if take(&bytes, &mut at, 8)? != MODEL_MAGIC {
        return Err(LearnerError::CorruptFile("bad magic".into()));
    }
    let version = read_u32(&bytes, &mut at)?;
    if version != MODEL_VERSION {
        return Err(LearnerError::VersionMismatch(format!("file version {version}, expected {MODEL_VERSION}")));
    }
    let hlen = read_u32(&bytes, &mut at)? as usize;
    let header: Header = serde_json::from_slice(take(&bytes, &mut at, hlen)?)
        .map_err(|e| LearnerError::CorruptFile(format!("header: {e}")))?;
    if let Some(arch) = expected {
        if *arch != header.arch {
            return Err(LearnerError::VersionMismatch("architecture differs from the expected one".into()));
        }
    }
    let mut net = Network::<T>::zeros(header.arch);
    if net.tensors != header.tensors {
        return Err(LearnerError::CorruptFile("tensor index does not match the architecture".into()));
    }
    let blob = take(&bytes, &mut at, 4 * net.num_params())?;
    if at != bytes.len() {
        return Err(LearnerError::CorruptFile("trailing bytes".into()));
    }
    for (p, c) in net.params.iter_mut().zip(blob.chunks_exact(4)) {
        *p = T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
    }
    Ok((net, header.meta))
}
