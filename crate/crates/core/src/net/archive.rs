//! Keyed tensor archive (safetensors layout).
//!
//! ```text
//! u64 LE header length | JSON header (space padded to 8 bytes) | raw data
//! ```
//!
//! The header maps each key to `{dtype, shape, data_offsets}` and carries a
//! `__metadata__` object of string values; `net_config` and `seed` are always
//! present. Tensors are stored as little-endian `F32` in key order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::params::ModelParams;
use super::NetConfig;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const METADATA: &str = "__metadata__";

#[derive(Serialize, Deserialize)]
struct Entry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

/// Serialize parameters with extra string metadata.
pub fn encode<S: Scalar>(params: &ModelParams<S>, extra: &BTreeMap<String, String>) -> Result<Vec<u8>> {
    let mut meta = extra.clone();
    meta.insert("format".into(), "cdnet".into());
    meta.insert("net_config".into(), serde_json::to_string(params.config())?);
    meta.insert("seed".into(), params.seed().to_string());

    let mut header = serde_json::Map::new();
    header.insert(METADATA.into(), serde_json::to_value(&meta)?);
    let mut data = Vec::new();
    for (key, t) in params.tensors() {
        let start = data.len();
        for v in t.data() {
            data.extend((v.f64() as f32).to_le_bytes());
        }
        let entry = Entry {
            dtype: "F32".into(),
            shape: t.shape().to_vec(),
            data_offsets: [start, data.len()],
        };
        header.insert(key.clone(), serde_json::to_value(entry)?);
    }
    let mut text = serde_json::to_string(&Value::Object(header))?;
    while text.len() % 8 != 0 {
        text.push(' ');
    }
    let mut out = Vec::with_capacity(8 + text.len() + data.len());
    out.extend((text.len() as u64).to_le_bytes());
    out.extend(text.as_bytes());
    out.extend(data);
    Ok(out)
}

pub fn decode<S: Scalar>(bytes: &[u8]) -> Result<(ModelParams<S>, BTreeMap<String, String>)> {
    let bad = |m: String| Error::Checkpoint(m);
    if bytes.len() < 8 {
        return Err(bad("truncated header".into()));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(8..8 + hlen)
        .ok_or_else(|| bad(format!("header length {hlen} exceeds file")))?;
    let data = &bytes[8 + hlen..];
    let header: serde_json::Map<String, Value> = serde_json::from_slice(body)?;
    let meta: BTreeMap<String, String> = match header.get(METADATA) {
        Some(v) => serde_json::from_value(v.clone())?,
        None => return Err(bad("missing metadata".into())),
    };
    let config: NetConfig = serde_json::from_str(
        meta.get("net_config")
            .ok_or_else(|| bad("metadata lacks net_config".into()))?,
    )?;
    let seed: u64 = meta
        .get("seed")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("metadata lacks seed".into()))?;

    let mut tensors = BTreeMap::new();
    for (key, value) in &header {
        if key == METADATA {
            continue;
        }
        let entry: Entry = serde_json::from_value(value.clone())?;
        if entry.dtype != "F32" {
            return Err(bad(format!("{key}: unsupported dtype {}", entry.dtype)));
        }
        let [start, end] = entry.data_offsets;
        let raw = data
            .get(start..end)
            .ok_or_else(|| bad(format!("{key}: data offsets out of range")))?;
        let values = raw
            .chunks_exact(4)
            .map(|b| S::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect();
        tensors.insert(key.clone(), Tensor::new(&entry.shape, values)?);
    }
    let params = ModelParams::from_tensors(config, seed, tensors)?;
    let mut extra = meta;
    for k in ["format", "net_config", "seed"] {
        extra.remove(k);
    }
    Ok((params, extra))
}

pub fn save<S: Scalar>(params: &ModelParams<S>, extra: &BTreeMap<String, String>, path: &Path) -> Result<()> {
    let bytes = encode(params, extra)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load<S: Scalar>(path: &Path) -> Result<(ModelParams<S>, BTreeMap<String, String>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build, Variant};

    #[test]
    fn round_trip_preserves_tensors_and_metadata() {
        let mut cfg = NetConfig::new(Variant::UnetLstm, 3);
        cfg.base_depth = 2;
        cfg.levels = 3;
        let p: ModelParams<f32> = build(&cfg, 11).unwrap();
        let mut extra = BTreeMap::new();
        extra.insert("note".to_string(), "x".to_string());
        let bytes = encode(&p, &extra).unwrap();
        assert_eq!(u64::from_le_bytes(bytes[..8].try_into().unwrap()) % 8, 0);
        let (q, meta) = decode::<f32>(&bytes).unwrap();
        assert_eq!(p, q);
        assert_eq!(meta.get("note").map(String::as_str), Some("x"));
        assert_eq!(encode(&q, &meta).unwrap(), bytes);
    }

    #[test]
    fn truncated_archive_rejected() {
        let mut cfg = NetConfig::new(Variant::UnetLstm, 1);
        cfg.base_depth = 1;
        cfg.levels = 2;
        let p: ModelParams<f32> = build(&cfg, 0).unwrap();
        let bytes = encode(&p, &BTreeMap::new()).unwrap();
        assert!(decode::<f32>(&bytes[..bytes.len() - 4]).is_err());
        assert!(decode::<f32>(&bytes[..4]).is_err());
    }
}
