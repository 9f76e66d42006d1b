//! Named parameter store with per-tensor trainable flags, plus the `.avcp`
//! checkpoint container.
//!
//! Container layout:
//!
//! ```text
//! u64 (little endian)  header length H in bytes
//! H bytes              UTF-8 JSON header
//! payload              concatenated f32 little-endian tensor data
//! ```
//!
//! The header is `{"format":"avcp","version":1,"tensors":{name: {"shape":[..],
//! "dtype":"f32","offset":byte_offset,"trainable":bool}}}` with offsets
//! relative to the start of the payload.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub tensor: Tensor<T>,
    pub trainable: bool,
}

/// Coarse grouping used by freeze policies and gradient-check reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Encoder,
    Projection,
    Decoder,
    Head,
}

impl ParamGroup {
    pub fn of(name: &str) -> Option<Self> {
        match name.split('.').next()? {
            "encoder" => Some(Self::Encoder),
            "projection" => Some(Self::Projection),
            "decoder" => Some(Self::Decoder),
            "head" => Some(Self::Head),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams<T> {
    entries: BTreeMap<String, Param<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::InvalidInput(format!("duplicate parameter `{name}`")));
        }
        self.entries.insert(name, Param { tensor, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param<T>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter `{name}`")))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.get(name)?.tensor)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(|p| p.tensor.numel()).sum()
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        self.get_mut(name)?.trainable = trainable;
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            tensor: p.tensor.cast(),
                            trainable: p.trainable,
                        },
                    )
                })
                .collect(),
        }
    }

    /// Copies every tensor of `other` whose name passes `filter` into `self`,
    /// checking shapes. Trainable flags of `self` are kept.
    pub fn copy_from(&mut self, other: &ModelParams<T>, filter: impl Fn(&str) -> bool) -> Result<usize> {
        let mut copied = 0;
        for (name, p) in self.entries.iter_mut().filter(|(n, _)| filter(n)) {
            let src = other
                .entries
                .get(name)
                .ok_or_else(|| Error::CheckpointMissing(name.clone()))?;
            if src.tensor.shape() != p.tensor.shape() {
                return Err(Error::CheckpointShape {
                    name: name.clone(),
                    expected: p.tensor.shape().to_vec(),
                    found: src.tensor.shape().to_vec(),
                });
            }
            p.tensor = src.tensor.clone();
            copied += 1;
        }
        Ok(copied)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut header = CheckpointHeader {
            format: "avcp".into(),
            version: 1,
            tensors: BTreeMap::new(),
        };
        let mut payload = Vec::with_capacity(self.num_values() * 4);
        for (name, p) in &self.entries {
            header.tensors.insert(
                name.clone(),
                TensorEntry {
                    shape: p.tensor.shape().to_vec(),
                    dtype: "f32".into(),
                    offset: payload.len() as u64,
                    trainable: p.trainable,
                },
            );
            for v in p.tensor.data() {
                payload.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        let header_bytes = serde_json::to_vec(&header)?;
        let mut file = fs::File::create(path).map_err(|e| Error::file(path, e))?;
        file.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        file.write_all(&header_bytes)?;
        file.write_all(&payload)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Checkpoint("file shorter than its length prefix".into()));
        }
        let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let header_end = 8usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Checkpoint("header length exceeds file size".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[8..header_end])?;
        if header.format != "avcp" || header.version != 1 {
            return Err(Error::Checkpoint(format!(
                "unsupported container {} v{}",
                header.format, header.version
            )));
        }
        let payload = &bytes[header_end..];
        let mut params = Self::new();
        for (name, entry) in header.tensors {
            if entry.dtype != "f32" {
                return Err(Error::Checkpoint(format!("tensor `{name}` has dtype {}", entry.dtype)));
            }
            let numel: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let end = start + numel * 4;
            if end > payload.len() {
                return Err(Error::Checkpoint(format!("tensor `{name}` runs past the payload")));
            }
            let data = payload[start..end]
                .chunks_exact(4)
                .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
                .collect();
            params.insert(name, Tensor::new(entry.shape, data)?, entry.trainable)?;
        }
        Ok(params)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    tensors: BTreeMap<String, TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    trainable: bool,
}

/// Truncated normal initializer (resampled outside ±2σ).
pub fn trunc_normal<T: Scalar, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    let normal = Normal::new(0.0, std).expect("std is positive");
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= 2.0 * std {
                break T::of(v);
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_round_trip_preserves_values_and_flags() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ModelParams::<f32>::new();
        p.insert("encoder.w", trunc_normal(&[3, 4], 0.02, &mut rng), true).unwrap();
        p.insert("head.bias", Tensor::zeros(&[4]), false).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.avcp");
        p.save(&path).unwrap();
        let q = ModelParams::<f32>::load(&path).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn copy_from_names_offending_tensor() {
        let mut a = ModelParams::<f32>::new();
        a.insert("decoder.x", Tensor::zeros(&[2, 2]), true).unwrap();
        let mut b = ModelParams::<f32>::new();
        b.insert("decoder.x", Tensor::zeros(&[2, 3]), true).unwrap();
        match a.copy_from(&b, |_| true) {
            Err(Error::CheckpointShape { name, expected, found }) => {
                assert_eq!(name, "decoder.x");
                assert_eq!(expected, vec![2, 2]);
                assert_eq!(found, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trunc_normal_stays_within_two_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t: Tensor<f64> = trunc_normal(&[1000], 0.02, &mut rng);
        assert!(t.data().iter().all(|v| v.abs() <= 0.04));
    }
}
