//! Checkpoint container: magic `HVTCKPT\0`, `u32` version, `u64` header
//! length, a JSON header (model config and tensor names and shapes), then
//! every tensor as little-endian `f64` in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::autograd::Tensor;
use super::config::ModelConfig;
use super::network::HvTrackNet;
use super::params::ParamStore;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HVTCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorInfo>,
}

pub fn to_bytes(net: &HvTrackNet) -> Vec<u8> {
    let header = Header {
        config: net.config().clone(),
        tensors: net.params().iter().map(|(_, n, t)| TensorInfo { name: n.to_string(), rows: t.rows, cols: t.cols }).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + json.len() + net.params().scalar_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, t) in net.params().iter() {
        for x in &t.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

/// Parses a checkpoint. With `expected`, a differing stored config is refused.
pub fn from_bytes(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<HvTrackNet> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    if let Some(cfg) = expected {
        if *cfg != header.config {
            return Err(bad("checkpoint was trained with a different model config"));
        }
    }
    let mut net = HvTrackNet::new(header.config, 0)?;
    let mut store = ParamStore::new();
    let mut pos = 20 + hlen;
    for info in &header.tensors {
        let n = info.rows * info.cols;
        let raw = bytes.get(pos..pos + 8 * n).ok_or_else(|| Error::Checkpoint(format!("truncated tensor {}", info.name)))?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        store.add(info.name.clone(), Tensor::from_vec(info.rows, info.cols, data));
        pos += 8 * n;
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes after the last tensor"));
    }
    net.set_params(store)?;
    Ok(net)
}

pub fn save(net: &HvTrackNet, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path, expected: Option<&ModelConfig>) -> Result<HvTrackNet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let net = HvTrackNet::new(ModelConfig::toy(), 3).unwrap();
        let back = from_bytes(&to_bytes(&net), Some(net.config())).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn refuses_mismatch_and_garbage() {
        let net = HvTrackNet::new(ModelConfig::toy(), 3).unwrap();
        let bytes = to_bytes(&net);
        let other = ModelConfig { use_om: false, ..ModelConfig::toy() };
        assert!(from_bytes(&bytes, Some(&other)).is_err());
        assert!(from_bytes(&bytes[..bytes.len() - 1], None).is_err());
        assert!(from_bytes(b"nonsense", None).is_err());
    }
}
