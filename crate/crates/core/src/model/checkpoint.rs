//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 8 bytes   magic "SETRCKPT"
//! u32       format version (1)
//! u64       header length in bytes
//! header    UTF-8 JSON: dtype, model config, config hash, tensor table, metadata
//! payload   every tensor in table order, raw little-endian scalars
//! ```
//!
//! The tensor table lists learnable parameters first (in the model's
//! flattening order), then batch-norm buffers, then free-form extras such
//! as optimizer state.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Buffers, ModelConfig, ModelWeights, Params};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SETRCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Section {
    Param,
    Buffer,
    Extra,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    section: Section,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    dtype: String,
    config: ModelConfig,
    config_hash: String,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

/// Weights plus optional extra tensors and metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub weights: ModelWeights<T>,
    pub extras: Vec<(String, Tensor<T>)>,
    pub metadata: serde_json::Value,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(weights: ModelWeights<T>) -> Self {
        Self {
            weights,
            extras: Vec::new(),
            metadata: serde_json::Value::Null,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let w = &self.weights;
        let mut entries = Vec::new();
        let mut payload: Vec<&Tensor<T>> = Vec::new();
        for (name, t) in w.named_params() {
            entries.push(TensorEntry { name, shape: t.shape.clone(), section: Section::Param });
            payload.push(t);
        }
        for (name, t) in w.buffers.named() {
            entries.push(TensorEntry { name, shape: t.shape.clone(), section: Section::Buffer });
            payload.push(t);
        }
        for (name, t) in &self.extras {
            entries.push(TensorEntry { name: name.clone(), shape: t.shape.clone(), section: Section::Extra });
            payload.push(t);
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            dtype: T::DTYPE.to_string(),
            config: w.config().clone(),
            config_hash: w.config().hash(),
            tensors: entries,
            metadata: self.metadata.clone(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let n: usize = payload.iter().map(|t| t.len()).sum();
        let mut out = Vec::with_capacity(20 + header.len() + n * T::BYTES);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in payload {
            for &v in &t.data {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic bytes".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(format!("format version {version}, expected {FORMAT_VERSION}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(bad(format!("truncated header: {hlen} bytes declared, {} present", body.len())));
        }
        let header: Header =
            serde_json::from_slice(&body[..hlen]).map_err(|e| bad(format!("unreadable header: {e}")))?;
        if header.dtype != T::DTYPE {
            return Err(bad(format!("dtype {} stored, {} requested", header.dtype, T::DTYPE)));
        }
        let actual_hash = header.config.hash();
        if actual_hash != header.config_hash {
            return Err(bad(format!(
                "config hash mismatch: header says {}, config hashes to {actual_hash}",
                header.config_hash
            )));
        }
        let cfg = header.config.clone();
        cfg.validate().map_err(|e| bad(format!("stored config invalid: {e}")))?;

        let mut data = &body[hlen..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            let need = n * T::BYTES;
            if data.len() < need {
                return Err(bad(format!("payload truncated in tensor {}", e.name)));
            }
            let values = data[..need].chunks_exact(T::BYTES).map(T::read_le).collect();
            data = &data[need..];
            tensors.push((e, Tensor { shape: e.shape.clone(), data: values }));
        }
        if !data.is_empty() {
            return Err(bad(format!("{} trailing payload bytes", data.len())));
        }

        let mut params = Params::<T>::zeros(&cfg);
        let mut buffers = Buffers::<T>::fresh(&cfg);
        let expected_params = cfg.parameter_layout();
        let expected_buffers: Vec<(String, Vec<usize>)> =
            buffers.named().into_iter().map(|(n, t)| (n, t.shape.clone())).collect();
        let mut it = tensors.into_iter();
        for ((name, shape), slot) in expected_params.iter().zip(params.tensors_mut()) {
            *slot = take(&mut it, name, shape, Section::Param)?;
        }
        for ((name, shape), slot) in expected_buffers.iter().zip(buffers.tensors_mut()) {
            *slot = take(&mut it, name, shape, Section::Buffer)?;
        }
        let mut extras = Vec::new();
        for (e, t) in it {
            if e.section != Section::Extra {
                return Err(bad(format!("unexpected {:?} tensor {}", e.section, e.name)));
            }
            extras.push((e.name.clone(), t));
        }
        let weights = ModelWeights::from_parts(cfg, params, buffers)?;
        Ok(Self { weights, extras, metadata: header.metadata })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<u64> {
        let path = path.as_ref();
        let bytes = self.to_bytes();
        fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(bytes.len() as u64)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn extra(&self, name: &str) -> Option<&Tensor<T>> {
        self.extras.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn take<'a, T, I>(it: &mut I, name: &str, shape: &[usize], section: Section) -> Result<Tensor<T>>
where
    I: Iterator<Item = (&'a TensorEntry, Tensor<T>)>,
{
    let (e, t) = it
        .next()
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
    if e.name != name || e.shape != shape || e.section != section {
        return Err(Error::Checkpoint(format!(
            "tensor mismatch: expected {name} {shape:?}, found {} {:?}",
            e.name, e.shape
        )));
    }
    Ok(t)
}

pub fn serialize_weights<T: Scalar>(weights: &ModelWeights<T>, path: impl AsRef<Path>) -> Result<u64> {
    Checkpoint::new(weights.clone()).save(path)
}

pub fn deserialize_weights<T: Scalar>(path: impl AsRef<Path>) -> Result<ModelWeights<T>> {
    Ok(Checkpoint::load(path)?.weights)
}

/// Loads weights and rejects checkpoints trained for a different config.
pub fn load_for_config<T: Scalar>(path: impl AsRef<Path>, config: &ModelConfig) -> Result<ModelWeights<T>> {
    let w = deserialize_weights(path)?;
    if w.config() != config {
        return Err(Error::Checkpoint(format!(
            "config mismatch: checkpoint hash {}, requested {}",
            w.config().hash(),
            config.hash()
        )));
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let cfg = ModelConfig::desk();
        let mut w = ModelWeights::<f32>::init(&cfg, 1).unwrap();
        w.buffers.running[0][1].mean.data[0] = 0.123_456_79;
        let mut ck = Checkpoint::new(w);
        ck.extras.push(("optim.step".into(), Tensor::filled(&[1], 3.0)));
        ck.metadata = serde_json::json!({"epoch": 2});
        let back = Checkpoint::<f32>::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        for (a, b) in back.weights.params.flatten().iter().zip(ck.weights.params.flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_tampering() {
        let cfg = ModelConfig::desk();
        let bytes = Checkpoint::new(ModelWeights::<f64>::init(&cfg, 1).unwrap()).to_bytes();
        assert!(matches!(Checkpoint::<f32>::from_bytes(&bytes), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::<f64>::from_bytes(&extra).is_err());

        // Edit the config inside the header without updating the hash.
        let needle = b"\"se_reduction\":4";
        let at = bytes.windows(needle.len()).position(|w| w == needle).unwrap();
        let mut tampered = bytes.clone();
        tampered[at + needle.len() - 1] = b'2';
        let err = Checkpoint::<f64>::from_bytes(&tampered).unwrap_err();
        assert!(err.to_string().contains("hash mismatch"), "{err}");
    }
}
