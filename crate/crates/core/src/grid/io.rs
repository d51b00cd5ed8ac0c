//! Raw volume format: little-endian f32 payload plus a JSON sidecar
//! `{"dims":[nz,ny,nx],"spacing":[sz,sy,sx],"dtype":"f32","order":"zyx"}`.
//! The sidecar lives next to the payload with the extension replaced by `.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Volume;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub dtype: String,
    pub order: String,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Write `v` as f32 payload at `path` and its header next to it.
///
/// Storage is f32, so the round trip is bit-exact for volumes whose values
/// are representable in f32 (e.g. anything previously loaded).
pub fn save_raw(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = RawHeader {
        dims: v.dims(),
        spacing: v.spacing(),
        dtype: "f32".into(),
        order: "zyx".into(),
    };
    let mut bytes = Vec::with_capacity(v.len() * 4);
    for &x in v.data() {
        bytes.extend_from_slice(&(x as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    fs::write(sidecar_path(path), serde_json::to_string(&header)?)?;
    Ok(())
}

pub fn load_raw(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let header_path = sidecar_path(path);
    let header: RawHeader = serde_json::from_slice(&fs::read(&header_path)?)?;
    if header.dtype != "f32" || header.order != "zyx" {
        return Err(Error::Header {
            path: header_path,
            msg: format!(
                "unsupported dtype/order {}/{}",
                header.dtype, header.order
            ),
        });
    }
    let payload = fs::read(path)?;
    let n: usize = header.dims.iter().product();
    let expected = (n * 4) as u64;
    if payload.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            actual: payload.len() as u64,
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Volume::from_vec(header.dims, header.spacing, data)
}
