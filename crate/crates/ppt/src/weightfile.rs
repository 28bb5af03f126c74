//! Binary weight container: magic "PPTW", a little-endian u32 header
//! length, a JSON header describing the tensors, then a raw little-endian
//! f32 payload. Offsets in the header index into the payload in bytes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vit::{tensor_specs, ModelConfig, ModelWeights};

pub const MAGIC: &[u8; 4] = b"PPTW";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

pub fn encode_weights(weights: &ModelWeights, cfg: &ModelConfig) -> Result<Vec<u8>> {
    weights.validate(cfg)?;
    let named = weights.named_tensors(cfg);
    let mut tensors = Vec::with_capacity(named.len());
    let mut payload: Vec<u8> = Vec::new();
    for (name, shape, data) in &named {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: shape.clone(),
            dtype: "f32".to_string(),
            offset: payload.len() as u64,
        });
        for v in data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header { version: FORMAT_VERSION, config: cfg.clone(), tensors };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Weights(format!("cannot serialize weight header: {e}")))?;
    let mut out = Vec::with_capacity(8 + header_json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Decodes and fully validates a weight file against `cfg`: magic, header,
/// exact tensor set, shapes, dtype, and non-overlapping in-bounds offsets.
pub fn decode_weights(data: &[u8], cfg: &ModelConfig) -> Result<ModelWeights> {
    if data.len() < 8 || &data[0..4] != MAGIC {
        return Err(Error::Weights("missing PPTW magic".into()));
    }
    let header_len = u32::from_le_bytes([data[4], data[5], data[6], data[7]]) as usize;
    if data.len() < 8 + header_len {
        return Err(Error::Weights("truncated weight file header".into()));
    }
    let header: Header = serde_json::from_slice(&data[8..8 + header_len])
        .map_err(|e| Error::Weights(format!("invalid weight header JSON: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(Error::Weights(format!("unsupported weight format version {}", header.version)));
    }
    if header.config != *cfg {
        return Err(Error::Weights("weight file was written for a different model config".into()));
    }
    let payload = &data[8 + header_len..];

    let specs = tensor_specs(cfg);
    if header.tensors.len() != specs.len() {
        return Err(Error::Weights(format!(
            "weight file has {} tensors, model needs {}",
            header.tensors.len(),
            specs.len()
        )));
    }
    // exact set match plus shape check; spans checked for overlap below
    let mut spans: Vec<(u64, u64, String)> = Vec::with_capacity(specs.len());
    let mut by_name = std::collections::HashMap::new();
    for t in &header.tensors {
        if t.dtype != "f32" {
            return Err(Error::Weights(format!("tensor {} has unsupported dtype {}", t.name, t.dtype)));
        }
        if by_name.insert(t.name.clone(), t).is_some() {
            return Err(Error::Weights(format!("tensor {} appears twice", t.name)));
        }
    }
    for (name, shape) in &specs {
        let t = by_name
            .get(name)
            .ok_or_else(|| Error::Weights(format!("missing tensor {name}")))?;
        if t.shape != *shape {
            return Err(Error::Weights(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        let bytes = 4 * shape.iter().product::<usize>() as u64;
        let end = t.offset.checked_add(bytes).ok_or_else(|| Error::Weights("offset overflow".into()))?;
        if end > payload.len() as u64 {
            return Err(Error::Weights(format!("tensor {name} extends past end of payload")));
        }
        spans.push((t.offset, end, name.clone()));
    }
    spans.sort();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(Error::Weights(format!("tensors {} and {} overlap", w[0].2, w[1].2)));
        }
    }

    ModelWeights::from_named(cfg, |name| {
        let t = by_name[name];
        let count: usize = t.shape.iter().product();
        let start = t.offset as usize;
        let mut values = Vec::with_capacity(count);
        for i in 0..count {
            let o = start + 4 * i;
            values.push(f32::from_le_bytes([payload[o], payload[o + 1], payload[o + 2], payload[o + 3]]));
        }
        Ok(values)
    })
}

pub fn read_weights(path: &std::path::Path, cfg: &ModelConfig) -> Result<ModelWeights> {
    let data = std::fs::read(path)
        .map_err(|e| Error::Weights(format!("cannot read {}: {e}", path.display())))?;
    decode_weights(&data, cfg)
}

pub fn write_weights(path: &std::path::Path, weights: &ModelWeights, cfg: &ModelConfig) -> Result<()> {
    std::fs::write(path, encode_weights(weights, cfg)?).map_err(Error::Io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::synthetic_weights;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig { image_size: 32, patch_size: 16, channels: 3, dim: 8, depth: 2, heads: 2, mlp_ratio: 4, num_classes: 5 }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = tiny_cfg();
        let w = synthetic_weights(&cfg, 42).unwrap();
        let bytes = encode_weights(&w, &cfg).unwrap();
        let back = decode_weights(&bytes, &cfg).unwrap();
        let a = w.named_tensors(&cfg);
        let b = back.named_tensors(&cfg);
        assert_eq!(a.len(), b.len());
        for ((na, sa, da), (nb, sb, db)) in a.iter().zip(&b) {
            assert_eq!(na, nb);
            assert_eq!(sa, sb);
            let ba: Vec<u32> = da.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = db.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ba, bb, "tensor {na} not bit-exact");
        }
    }

    #[test]
    fn encoding_is_deterministic() {
        let cfg = tiny_cfg();
        let w = synthetic_weights(&cfg, 7).unwrap();
        assert_eq!(encode_weights(&w, &cfg).unwrap(), encode_weights(&w, &cfg).unwrap());
    }

    #[test]
    fn rejects_corruption() {
        let cfg = tiny_cfg();
        let w = synthetic_weights(&cfg, 1).unwrap();
        let good = encode_weights(&w, &cfg).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(decode_weights(&bad_magic, &cfg).is_err());

        let truncated = &good[..good.len() - 5];
        assert!(decode_weights(truncated, &cfg).is_err());

        let mut other = tiny_cfg();
        other.num_classes = 6;
        assert!(decode_weights(&good, &other).is_err(), "config mismatch");
    }

    #[test]
    fn rejects_overlapping_offsets() {
        let cfg = tiny_cfg();
        let w = synthetic_weights(&cfg, 1).unwrap();
        let good = encode_weights(&w, &cfg).unwrap();
        let header_len = u32::from_le_bytes([good[4], good[5], good[6], good[7]]) as usize;
        let mut header: Header = serde_json::from_slice(&good[8..8 + header_len]).unwrap();
        header.tensors[1].offset = header.tensors[0].offset;
        let hj = serde_json::to_vec(&header).unwrap();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(hj.len() as u32).to_le_bytes());
        out.extend_from_slice(&hj);
        out.extend_from_slice(&good[8 + header_len..]);
        let err = decode_weights(&out, &cfg).unwrap_err();
        assert!(err.to_string().contains("overlap"), "{err}");
    }
}
