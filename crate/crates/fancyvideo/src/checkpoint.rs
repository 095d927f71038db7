//! `.fvckpt` checkpoints.
//!
//! Layout: the 8-byte magic `FVCKPT\0\0`, the manifest length as a
//! little-endian `u64`, the manifest JSON, then one blob of little-endian
//! `f32` values. Manifest entries give each tensor's name, shape and byte
//! offset into the blob; offsets are cumulative in manifest order (model
//! parameters, then Adam first moments, then Adam second moments).

use std::path::Path;

use fancyvideo_core::denoiser::{Denoiser, Param};
use fancyvideo_core::optim::Adam;
use fancyvideo_core::rng::CounterRng;
use fancyvideo_core::train::{TrainConfig, Trainer};
use fancyvideo_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::blob::{decode_f32, encode_f32};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MAGIC: &[u8; 8] = b"FVCKPT\0\0";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub byte_offset: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub key: u64,
    pub counter: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub config: TrainConfig,
    pub step: u64,
    pub rng: RngState,
    pub adam_step: u64,
    pub params: Vec<TensorEntry>,
    pub adam_m: Vec<TensorEntry>,
    pub adam_v: Vec<TensorEntry>,
    pub blob_bytes: u64,
}

/// Complete training state; parameters and moments are stored at 32 bits.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: Denoiser,
    pub optimizer: Adam,
    pub rng: CounterRng,
    pub step: u64,
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer) -> Self {
        Self {
            config: trainer.config,
            model: trainer.model.clone(),
            optimizer: trainer.optimizer.clone(),
            rng: trainer.rng,
            step: trainer.step,
        }
    }

    pub fn into_trainer(self) -> Result<Trainer> {
        Ok(Trainer::from_parts(
            self.config,
            self.model,
            self.optimizer,
            self.rng,
            self.step,
        )?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut blob = Vec::new();
        let mut entry = |name: &str, shape: &[usize], data: &[f64]| -> Result<TensorEntry> {
            let byte_offset = blob.len() as u64;
            encode_f32(data, &mut blob).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
            Ok(TensorEntry {
                name: name.to_owned(),
                shape: shape.to_vec(),
                byte_offset,
            })
        };
        let params = self.model.params();
        if self.optimizer.m.len() != params.len() || self.optimizer.v.len() != params.len() {
            return Err(Error::Checkpoint(
                "optimizer state does not match the model".into(),
            ));
        }
        let mut entries = [Vec::new(), Vec::new(), Vec::new()];
        for p in params {
            entries[0].push(entry(&p.name, p.tensor.shape(), p.tensor.data())?);
        }
        for (p, m) in params.iter().zip(&self.optimizer.m) {
            entries[1].push(entry(&p.name, p.tensor.shape(), m)?);
        }
        for (p, v) in params.iter().zip(&self.optimizer.v) {
            entries[2].push(entry(&p.name, p.tensor.shape(), v)?);
        }
        let [params, adam_m, adam_v] = entries;
        let (key, counter) = self.rng.state();
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            config: self.config,
            step: self.step,
            rng: RngState { key, counter },
            adam_step: self.optimizer.step,
            params,
            adam_m,
            adam_v,
            blob_bytes: blob.len() as u64,
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(16 + json.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (manifest, blob) = split(bytes)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        if blob.len() as u64 != manifest.blob_bytes {
            return Err(Error::Checkpoint(format!(
                "blob holds {} bytes, manifest declares {}",
                blob.len(),
                manifest.blob_bytes
            )));
        }
        manifest.config.validate()?;
        let mut cursor = 0u64;
        let mut read = |entries: &[TensorEntry]| -> Result<Vec<Param>> {
            entries
                .iter()
                .map(|e| {
                    if e.byte_offset != cursor {
                        return Err(Error::Checkpoint(format!(
                            "{}: offset {} is not cumulative (expected {cursor})",
                            e.name, e.byte_offset
                        )));
                    }
                    let n: usize = e.shape.iter().product();
                    let end = cursor + 4 * n as u64;
                    let data = blob.get(cursor as usize..end as usize).ok_or_else(|| {
                        Error::Checkpoint(format!("{}: blob is truncated", e.name))
                    })?;
                    cursor = end;
                    let data = decode_f32(data)
                        .map_err(|err| Error::Checkpoint(format!("{}: {err}", e.name)))?;
                    Ok(Param {
                        name: e.name.clone(),
                        tensor: Tensor::new(e.shape.clone(), data)?,
                    })
                })
                .collect()
        };
        let params = read(&manifest.params)?;
        let m = read(&manifest.adam_m)?;
        let v = read(&manifest.adam_v)?;
        if cursor != manifest.blob_bytes {
            return Err(Error::Checkpoint(format!(
                "entries cover {cursor} bytes of a {}-byte blob",
                manifest.blob_bytes
            )));
        }
        let names = |ps: &[Param]| ps.iter().map(|p| p.name.clone()).collect::<Vec<_>>();
        if names(&m) != names(&params) || names(&v) != names(&params) {
            return Err(Error::Checkpoint(
                "optimizer entries do not mirror the parameters".into(),
            ));
        }
        let model = Denoiser::from_params(manifest.config.model, params)
            .map_err(|e| Error::Checkpoint(format!("parameters do not match the config: {e}")))?;
        let optimizer = Adam {
            config: manifest.config.adam,
            step: manifest.adam_step,
            m: m.into_iter().map(|p| p.tensor.into_data()).collect(),
            v: v.into_iter().map(|p| p.tensor.into_data()).collect(),
        };
        Ok(Self {
            config: manifest.config,
            model,
            optimizer,
            rng: CounterRng::from_state(manifest.rng.key, manifest.rng.counter),
            step: manifest.step,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(Error::io(path))?)
    }
}

/// Parses the header and manifest; returns the manifest and the raw blob.
pub fn split(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("missing FVCKPT header".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8-byte slice"));
    let end = usize::try_from(len)
        .ok()
        .and_then(|l| l.checked_add(16))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Checkpoint(format!("manifest length {len} exceeds file size")))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[16..end])
        .map_err(|e| Error::Checkpoint(format!("corrupt manifest: {e}")))?;
    Ok((manifest, &bytes[end..]))
}
