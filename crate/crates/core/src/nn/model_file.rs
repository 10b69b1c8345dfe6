//! Model file format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "UNT1"
//! 4       1     format version (1)
//! 5       4     header length N, u32 little-endian
//! 9       N     UTF-8 JSON header {unet, loss, param_count, provenance}
//! 9+N     4·P   parameters as f32 little-endian, in ParamLayout order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::loss::LossParams;
use super::tensor::{Real, Tensor};
use super::unet::{ParamLayout, UNetConfig, UNetParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"UNT1";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHeader {
    pub unet: UNetConfig,
    pub loss: LossParams,
    pub param_count: usize,
    /// How the weights were produced (training config, selection metric,
    /// best epoch). Free-form but deterministic.
    #[serde(default)]
    pub provenance: serde_json::Value,
}

pub fn encode_model(params: &UNetParams<f32>, loss: &LossParams, provenance: serde_json::Value) -> Vec<u8> {
    let header = ModelHeader {
        unet: *params.config(),
        loss: *loss,
        param_count: params.param_count(),
        provenance,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(9 + json.len() + 4 * header.param_count);
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in params.tensors() {
        for &v in t.data() {
            v.to_le(&mut out);
        }
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<(UNetParams<f32>, ModelHeader)> {
    if bytes.len() < 9 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a UNT1 model file (bad magic)".into()));
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported model format version {}",
            bytes[4]
        )));
    }
    let n = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let body = bytes
        .get(9..9 + n)
        .ok_or_else(|| Error::Format("model header is truncated".into()))?;
    let header: ModelHeader = serde_json::from_slice(body)
        .map_err(|e| Error::Format(format!("model header: {e}")))?;
    header.unet.validate()?;
    let layout = ParamLayout::new(&header.unet);
    if layout.param_count() != header.param_count {
        return Err(Error::Format(format!(
            "header declares {} parameters but the config implies {}",
            header.param_count,
            layout.param_count()
        )));
    }
    let data = &bytes[9 + n..];
    if data.len() != header.param_count * f32::BYTES {
        return Err(Error::Format(format!(
            "expected {} parameter bytes, found {}",
            header.param_count * f32::BYTES,
            data.len()
        )));
    }
    let mut values = data.chunks_exact(f32::BYTES).map(f32::from_le);
    let tensors = layout
        .entries
        .iter()
        .map(|(_, shape)| {
            let count: usize = shape.iter().product();
            Tensor::from_vec(shape, values.by_ref().take(count).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((UNetParams::from_tensors(header.unet, tensors)?, header))
}

pub fn serialize_params(
    params: &UNetParams<f32>,
    loss: &LossParams,
    provenance: serde_json::Value,
    path: &Path,
) -> Result<()> {
    fs::write(path, encode_model(params, loss, provenance)).map_err(|e| Error::io(path, e))
}

pub fn deserialize_params(path: &Path) -> Result<(UNetParams<f32>, ModelHeader)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::unet::unet_init;

    #[test]
    fn round_trip_is_exact() {
        let p = unet_init(&UNetConfig::tiny(), 9).unwrap();
        let bytes = encode_model(&p, &LossParams::default(), serde_json::json!({"seed": 9}));
        let (q, h) = decode_model(&bytes).unwrap();
        assert_eq!(p, q);
        assert_eq!(h.unet, UNetConfig::tiny());
        assert_eq!(encode_model(&q, &h.loss, h.provenance.clone()), bytes);
    }

    #[test]
    fn truncation_and_magic_are_format_errors() {
        let p = unet_init(&UNetConfig::tiny(), 9).unwrap();
        let bytes = encode_model(&p, &LossParams::default(), serde_json::Value::Null);
        for cut in [3, 8, 20, bytes.len() - 1] {
            assert!(matches!(decode_model(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_model(&bad), Err(Error::Format(_))));
        let mut bad = bytes;
        bad[4] = 2;
        assert!(matches!(decode_model(&bad), Err(Error::Format(_))));
    }
}
