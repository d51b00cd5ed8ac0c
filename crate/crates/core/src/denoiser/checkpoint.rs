//! Parameters as a little-endian `f32` blob with a JSON manifest beside it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EpsNet, Label, NetConfig, ParamSpec};
use crate::diffusion::Schedule;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: NetConfig,
    pub layers: Vec<ParamSpec>,
    pub schedule_hash: String,
    pub labels: Vec<Label>,
    pub dtype: String,
}

fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `path` (parameters) and `path` with a `.json` extension
/// (manifest). Parameters are narrowed to `f32`.
pub fn save_checkpoint(net: &EpsNet, sched: &Schedule, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let manifest = Manifest {
        config: net.config().clone(),
        layers: net.param_specs().to_vec(),
        schedule_hash: sched.hash(),
        labels: Label::ALL.to_vec(),
        dtype: "f32".into(),
    };
    let bytes: Vec<u8> = net
        .params()
        .iter()
        .flat_map(|&p| (p as f32).to_le_bytes())
        .collect();
    fs::write(path, bytes)?;
    fs::write(manifest_path(path), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Loads a checkpoint, refusing one trained under a different schedule.
pub fn load_checkpoint(path: impl AsRef<Path>, sched: &Schedule) -> Result<EpsNet> {
    let path = path.as_ref();
    let mpath = manifest_path(path);
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&mpath)?)?;
    if manifest.dtype != "f32" {
        return Err(Error::Header {
            path: mpath,
            msg: format!("unsupported dtype {}", manifest.dtype),
        });
    }
    if manifest.schedule_hash != sched.hash() {
        return Err(Error::Header {
            path: mpath,
            msg: "checkpoint was trained under a different noise schedule".into(),
        });
    }
    let bytes = fs::read(path)?;
    let n: usize = manifest.layers.iter().map(ParamSpec::len).sum();
    if bytes.len() != n * 4 {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected: (n * 4) as u64,
            actual: bytes.len() as u64,
        });
    }
    let params = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let net = EpsNet::from_params(manifest.config, params)?;
    if net.param_specs() != manifest.layers.as_slice() {
        return Err(Error::Header {
            path: mpath,
            msg: "layer table does not match the network configuration".into(),
        });
    }
    Ok(net)
}
