//! Binary checkpoint format.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! "RGAS"  u32 version
//! u32 fingerprint length, fingerprint bytes (UTF-8 ModelConfig echo)
//! u32 tensor count
//! per tensor: u16 name length, name bytes, u8 ndim, u32 dims[ndim], f32 payload
//! ```
//!
//! Tensors are the trainable parameters in registry order, then
//! `<bn>.running_mean` / `<bn>.running_var` for every batch-norm layer, then
//! optionally `adam.m.<param>` / `adam.v.<param>` and a two-element
//! `adam.state` tensor holding the step count and learning rate.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::nn::config::ModelConfig;
use crate::nn::model::RgaNet;
use crate::optim::Adam;
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"RGAS";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

/// Fully parsed checkpoint file.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: String,
    pub tensors: Vec<StoredTensor>,
}

impl Checkpoint {
    pub fn config(&self) -> Result<ModelConfig> {
        ModelConfig::from_fingerprint(&self.fingerprint)
            .map_err(|e| CheckpointError::Malformed(e.to_string()).into())
    }

    pub fn tensor(&self, name: &str) -> Option<&StoredTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Captures a model's weights, running statistics and optionally the
    /// optimizer state.
    pub fn from_model<T: Scalar>(net: &RgaNet<T>, optimizer: Option<&Adam>) -> Self {
        let store = net.params();
        let mut tensors = Vec::new();
        let to_f32 = |xs: &[T]| xs.iter().map(|v| v.as_f32()).collect::<Vec<_>>();
        for p in store.params() {
            tensors.push(StoredTensor {
                name: p.name.clone(),
                dims: p.value.shape().to_vec(),
                data: to_f32(p.value.data()),
            });
        }
        for s in store.bn_stats() {
            for (suffix, vals) in [("running_mean", &s.running_mean), ("running_var", &s.running_var)] {
                tensors.push(StoredTensor {
                    name: format!("{}.{suffix}", s.name),
                    dims: vec![vals.len()],
                    data: to_f32(vals),
                });
            }
        }
        if let Some(adam) = optimizer {
            for p in store.params() {
                for (slot, t) in [("m", &p.adam_m), ("v", &p.adam_v)] {
                    tensors.push(StoredTensor {
                        name: format!("adam.{slot}.{}", p.name),
                        dims: t.shape().to_vec(),
                        data: to_f32(t.data()),
                    });
                }
            }
            tensors.push(StoredTensor {
                name: "adam.state".into(),
                dims: vec![2],
                data: vec![adam.step as f32, adam.lr as f32],
            });
        }
        Checkpoint {
            fingerprint: net.config().fingerprint(),
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.fingerprint.len() as u32).to_le_bytes());
        out.extend_from_slice(self.fingerprint.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.dims.len() as u8);
            for &d in &t.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let flen = r.u32("fingerprint length")? as usize;
        let fingerprint = String::from_utf8(r.take(flen, "fingerprint")?.to_vec())
            .map_err(|_| CheckpointError::Malformed("fingerprint is not UTF-8".into()))?;
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let nlen = r.u16("tensor name length")? as usize;
            let name = String::from_utf8(r.take(nlen, "tensor name")?.to_vec())
                .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?;
            let ndim = r.take(1, "tensor rank")?[0] as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u32("tensor dims")? as usize);
            }
            let numel = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| CheckpointError::Malformed(format!("tensor `{name}` is too large")))?;
            let payload = r.take(
                numel
                    .checked_mul(4)
                    .ok_or_else(|| CheckpointError::Malformed(format!("tensor `{name}` is too large")))?,
                "tensor payload",
            )?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push(StoredTensor { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint { fingerprint, tensors })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CheckpointError::Truncated(what)),
        }
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }
}

pub fn save_checkpoint<T: Scalar>(net: &RgaNet<T>, optimizer: Option<&Adam>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, Checkpoint::from_model(net, optimizer).to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Checkpoint::from_bytes(&bytes)?)
}

impl<T: Scalar> RgaNet<T> {
    /// Builds a model from the architecture recorded in the checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut net = RgaNet::build(ckpt.config()?)?;
        net.load_weights(ckpt)?;
        Ok(net)
    }

    /// Loads weights and running statistics after checking the architecture
    /// fingerprint. Returns the optimizer state if the file carries one.
    /// Nothing is modified when an error is returned.
    pub fn load_weights(&mut self, ckpt: &Checkpoint) -> Result<Option<Adam>> {
        let expected = self.config().fingerprint();
        if ckpt.fingerprint != expected {
            return Err(CheckpointError::FingerprintMismatch {
                expected,
                found: ckpt.fingerprint.clone(),
            }
            .into());
        }
        let by_name: HashMap<&str, &StoredTensor> = ckpt.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let fetch = |name: &str, dims: &[usize]| -> Result<&StoredTensor> {
            let t = by_name
                .get(name)
                .ok_or_else(|| CheckpointError::Malformed(format!("missing tensor `{name}`")))?;
            if t.dims != dims {
                return Err(CheckpointError::Malformed(format!(
                    "tensor `{name}` has dims {:?}, expected {dims:?}",
                    t.dims
                ))
                .into());
            }
            Ok(t)
        };
        let cast = |data: &[f32]| data.iter().map(|&v| T::of(v as f64)).collect::<Vec<T>>();

        // validate everything before touching the model
        let mut values = Vec::new();
        for p in self.params().params() {
            values.push(cast(&fetch(&p.name, p.value.shape())?.data));
        }
        let mut stats = Vec::new();
        for s in self.params().bn_stats() {
            let c = s.running_mean.len();
            stats.push((
                cast(&fetch(&format!("{}.running_mean", s.name), &[c])?.data),
                cast(&fetch(&format!("{}.running_var", s.name), &[c])?.data),
            ));
        }
        let adam = match by_name.get("adam.state") {
            Some(state) if state.data.len() == 2 => {
                let mut moments = Vec::new();
                for p in self.params().params() {
                    moments.push((
                        cast(&fetch(&format!("adam.m.{}", p.name), p.value.shape())?.data),
                        cast(&fetch(&format!("adam.v.{}", p.name), p.value.shape())?.data),
                    ));
                }
                Some((state.data[0] as u64, state.data[1] as f64, moments))
            }
            Some(_) => return Err(CheckpointError::Malformed("adam.state must hold 2 values".into()).into()),
            None => None,
        };

        let store = self.params_mut();
        for (p, v) in store.params_mut().iter_mut().zip(values) {
            p.value = Tensor::from_vec(p.value.shape(), v)?;
        }
        for (s, (m, v)) in store.bn_stats_mut().iter_mut().zip(stats) {
            s.running_mean = m;
            s.running_var = v;
        }
        Ok(match adam {
            Some((step, lr, moments)) => {
                for (p, (m, v)) in store.params_mut().iter_mut().zip(moments) {
                    p.adam_m = Tensor::from_vec(p.value.shape(), m)?;
                    p.adam_v = Tensor::from_vec(p.value.shape(), v)?;
                }
                Some(Adam {
                    step,
                    lr,
                    ..Adam::default()
                })
            }
            None => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let net = RgaNet::<f32>::new(ModelConfig::with_filters([1, 1, 1, 1]), 1).unwrap();
        let bytes = Checkpoint::from_model(&net, None).to_bytes();
        assert_eq!(&bytes[..4], b"RGAS");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), VERSION);
        let flen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        assert_eq!(&bytes[12..12 + flen], net.config().fingerprint().as_bytes());
    }

    #[test]
    fn distinct_load_errors() {
        let net = RgaNet::<f32>::new(ModelConfig::with_filters([1, 1, 1, 1]), 1).unwrap();
        let bytes = Checkpoint::from_model(&net, None).to_bytes();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::BadMagic(_))));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert_eq!(Checkpoint::from_bytes(&bad), Err(CheckpointError::UnsupportedVersion(9)));

        let cut = &bytes[..bytes.len() - 3];
        assert_eq!(Checkpoint::from_bytes(cut), Err(CheckpointError::Truncated("tensor payload")));

        let mut other = RgaNet::<f32>::build(ModelConfig::with_filters([2, 1, 1, 1])).unwrap();
        let ckpt = Checkpoint::from_bytes(&bytes).unwrap();
        assert!(matches!(
            other.load_weights(&ckpt),
            Err(Error::Checkpoint(CheckpointError::FingerprintMismatch { .. }))
        ));
    }
}
