//! Tensor blobs: raw little-endian `f32`, row-major, described by a JSON
//! manifest kept next to the data.

use std::path::Path;

use fancyvideo_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Appends `values` as little-endian `f32`. Values that are non-finite before
/// or after narrowing are rejected.
pub fn encode_f32(values: &[f64], out: &mut Vec<u8>) -> Result<()> {
    out.reserve(values.len() * 4);
    for (i, &v) in values.iter().enumerate() {
        let narrow = v as f32;
        if !narrow.is_finite() {
            return Err(Error::Format(format!(
                "value {v} at index {i} is not a finite f32"
            )));
        }
        out.extend_from_slice(&narrow.to_le_bytes());
    }
    Ok(())
}

pub fn decode_f32(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!(
            "blob of {} bytes is not a whole number of f32 values",
            bytes.len()
        )));
    }
    bytes
        .chunks_exact(4)
        .enumerate()
        .map(|(i, b)| {
            let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            if v.is_finite() {
                Ok(f64::from(v))
            } else {
                Err(Error::Format(format!("non-finite value at index {i}")))
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorManifest {
    pub shape: Vec<usize>,
    pub dtype: String,
}

/// Writes `<stem>.f32` and `<stem>.json`.
pub fn write_tensor(dir: &Path, stem: &str, tensor: &Tensor) -> Result<()> {
    let mut bytes = Vec::new();
    encode_f32(tensor.data(), &mut bytes)?;
    let data_path = dir.join(format!("{stem}.f32"));
    std::fs::write(&data_path, bytes).map_err(Error::io(&data_path))?;
    let manifest = TensorManifest {
        shape: tensor.shape().to_vec(),
        dtype: "f32le".into(),
    };
    let json_path = dir.join(format!("{stem}.json"));
    std::fs::write(&json_path, serde_json::to_vec_pretty(&manifest)?)
        .map_err(Error::io(&json_path))?;
    Ok(())
}

/// Reads a tensor written by [`write_tensor`]; `path` may name either file.
pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let json_path = path.with_extension("json");
    let data_path = path.with_extension("f32");
    let manifest: TensorManifest =
        serde_json::from_slice(&std::fs::read(&json_path).map_err(Error::io(&json_path))?)?;
    if manifest.dtype != "f32le" {
        return Err(Error::Format(format!(
            "unsupported dtype {:?}",
            manifest.dtype
        )));
    }
    let data = decode_f32(&std::fs::read(&data_path).map_err(Error::io(&data_path))?)?;
    Ok(Tensor::new(manifest.shape, data)?)
}
