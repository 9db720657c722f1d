//! Checkpoint container.
//!
//! ```text
//! magic    8 bytes  "CDLNCKPT"
//! version  u32
//! count    u32                       number of tensors
//! manifest count x {
//!     name_len u16, name (UTF-8),
//!     ndim u8, dims u32 x ndim,
//!     bits u8                        32 or 64
//! }
//! payloads                           raw row-major values, manifest order
//! kv_len   u32
//! kv       UTF-8 `key = value` lines (model.*, train.*, ckpt.*, adam.*)
//! ```
//!
//! All integers and floats are little-endian.

use std::collections::HashMap;
use std::path::Path;

use super::adam::{AdamConfig, OptimizerState};
use super::data::TrainConfig;
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::real::Real;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CDLNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ModelParams<T>,
    pub optimizer: OptimizerState<T>,
    /// Completed epochs.
    pub epoch: usize,
    pub best_validation_loss: f64,
    pub train_config: TrainConfig,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format {
        kind: "checkpoint",
        msg: msg.into(),
    }
}

struct Entry {
    name: String,
    dims: Vec<usize>,
    bits: u8,
    offset: usize,
}

impl Entry {
    fn len(&self) -> usize {
        self.dims.iter().product()
    }

    fn byte_len(&self) -> usize {
        self.len() * (self.bits as usize / 8)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(format_err("truncated file"));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

impl<T: Real> Checkpoint<T> {
    pub fn new(params: ModelParams<T>, train_config: TrainConfig) -> Self {
        let optimizer = OptimizerState::new(&params, train_config.lr0);
        Self {
            params,
            optimizer,
            epoch: 0,
            best_validation_loss: f64::INFINITY,
            train_config,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        self.params.config
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors: Vec<(String, Vec<usize>, &[T])> = Vec::new();
        for t in self.params.tensors() {
            tensors.push((t.name, t.shape, t.data));
        }
        for (prefix, moments) in [("adam.m/", &self.optimizer.m), ("adam.v/", &self.optimizer.v)] {
            for t in moments.tensors() {
                tensors.push((format!("{prefix}{}", t.name), t.shape, t.data));
            }
        }

        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, shape, _) in &tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(shape.len() as u8);
            for d in shape {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            out.push(T::BITS);
        }
        for (_, _, data) in &tensors {
            for v in data.iter() {
                v.write_le(&mut out);
            }
        }
        let kv = self.metadata().to_text();
        out.extend_from_slice(&(kv.len() as u32).to_le_bytes());
        out.extend_from_slice(kv.as_bytes());
        out
    }

    fn metadata(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        self.params.config.write_kv(&mut kv);
        self.train_config.write_kv(&mut kv);
        kv.set("ckpt.epoch", self.epoch);
        kv.set("ckpt.best_validation_loss", self.best_validation_loss);
        kv.set("adam.step", self.optimizer.step);
        kv.set("adam.lr", self.optimizer.lr);
        kv.set("adam.beta1", self.optimizer.config.beta1);
        kv.set("adam.beta2", self.optimizer.config.beta2);
        kv.set("adam.eps", self.optimizer.config.eps);
        kv
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader { buf: bytes, pos: 0 };
        if rd.take(8)? != CHECKPOINT_MAGIC {
            return Err(format_err("not a checkpoint (bad magic)"));
        }
        let version = rd.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format_err(format!(
                "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let count = rd.u32()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let n = rd.u16()? as usize;
            let name = std::str::from_utf8(rd.take(n)?)
                .map_err(|_| format_err("tensor name is not UTF-8"))?
                .to_string();
            let ndim = rd.u8()? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(rd.u32()? as usize);
            }
            let bits = rd.u8()?;
            if bits != 32 && bits != 64 {
                return Err(format_err(format!("tensor {name}: unsupported width {bits}")));
            }
            entries.push(Entry { name, dims, bits, offset: 0 });
        }
        for e in entries.iter_mut() {
            e.offset = rd.pos;
            rd.take(e.byte_len())?;
        }
        let kv_len = rd.u32()? as usize;
        let kv_text = std::str::from_utf8(rd.take(kv_len)?)
            .map_err(|_| format_err("metadata is not UTF-8"))?;
        if rd.pos != bytes.len() {
            return Err(format_err("trailing bytes after metadata"));
        }
        let kv = KeyValues::parse(kv_text)?;

        let config = ModelConfig::from_kv(&kv, ModelConfig::small())?;
        let train_config = TrainConfig::from_kv(&kv, TrainConfig::default())?;
        let by_name: HashMap<&str, &Entry> = entries.iter().map(|e| (e.name.as_str(), e)).collect();

        let template = ModelParams::<T>::init_zeroed(config);
        let load = |prefix: &str| -> Result<ModelParams<T>> {
            let mut p = template.clone();
            let names: Vec<(String, Vec<usize>)> =
                template.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
            for ((name, shape), dst) in names.iter().zip(p.tensors_mut()) {
                let full = format!("{prefix}{name}");
                let e = by_name
                    .get(full.as_str())
                    .ok_or_else(|| format_err(format!("missing tensor {full}")))?;
                if &e.dims != shape {
                    return Err(format_err(format!(
                        "tensor {full} has shape {:?}, expected {shape:?}",
                        e.dims
                    )));
                }
                let raw = &bytes[e.offset..e.offset + e.byte_len()];
                match e.bits {
                    32 => {
                        for (d, c) in dst.iter_mut().zip(raw.chunks_exact(4)) {
                            *d = T::of(f32::read_le(c) as f64);
                        }
                    }
                    _ => {
                        for (d, c) in dst.iter_mut().zip(raw.chunks_exact(8)) {
                            *d = T::of(f64::read_le(c));
                        }
                    }
                }
            }
            Ok(p)
        };
        let params = load("")?;
        let m = load("adam.m/")?;
        let v = load("adam.v/")?;
        let optimizer = OptimizerState {
            m,
            v,
            step: kv.require("adam.step")?,
            lr: kv.require("adam.lr")?,
            config: AdamConfig {
                beta1: kv.require("adam.beta1")?,
                beta2: kv.require("adam.beta2")?,
                eps: kv.require("adam.eps")?,
            },
        };
        Ok(Self {
            params,
            optimizer,
            epoch: kv.require("ckpt.epoch")?,
            best_validation_loss: kv.require("ckpt.best_validation_loss")?,
            train_config,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

impl<T: Real> ModelParams<T> {
    /// All-zero parameters with the shapes implied by `config`.
    pub(crate) fn init_zeroed(config: ModelConfig) -> Self {
        use crate::tensor::FilterBank;
        let bank = FilterBank::zeros(config.m, config.filter_size, config.stride);
        Self {
            config,
            a: vec![bank.clone(); config.k],
            b: vec![bank.clone(); config.k],
            d: bank,
            thresholds: vec![vec![T::zero(); config.m]; config.k],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::{adam_step, backward};
    use crate::tensor::Image;

    fn checkpoint<T: Real>() -> Checkpoint<T> {
        let cfg = ModelConfig { k: 2, m: 3, filter_size: 3, stride: 2, adaptive: true, seed: 4 };
        let tcfg = TrainConfig { sigma_lo: 0.05, sigma_hi: 0.15, ..TrainConfig::default() };
        let mut params = ModelParams::<T>::init(cfg, tcfg.sigma_mid()).unwrap();
        let mut ck = Checkpoint::new(params.clone(), tcfg);
        let y = Image::from_fn(8, 8, |r, c| T::of(((r * 5 + c * 3) % 7) as f64 / 7.0 - 0.4));
        let x = y.map(|v| v * T::of(0.9));
        let (_, g) = backward(&params, &y, &x, Some(0.1)).unwrap();
        adam_step(&mut params, &g, &mut ck.optimizer, 1e-3);
        ck.params = params;
        ck.epoch = 7;
        ck.best_validation_loss = 0.123456789;
        ck
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = checkpoint::<f64>();
        let bytes = ck.to_bytes();
        let back = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);

        let ck32 = checkpoint::<f32>();
        let back32 = Checkpoint::<f32>::from_bytes(&ck32.to_bytes()).unwrap();
        assert_eq!(back32, ck32);
    }

    #[test]
    fn widening_load_preserves_values() {
        let ck32 = checkpoint::<f32>();
        let wide = Checkpoint::<f64>::from_bytes(&ck32.to_bytes()).unwrap();
        assert_eq!(wide.params.d.weights()[0], ck32.params.d.weights()[0] as f64);
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let bytes = checkpoint::<f64>().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::<f64>::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[8] = 9;
        let err = Checkpoint::<f64>::from_bytes(&bad).unwrap_err().to_string();
        assert!(err.contains("version 9"), "{err}");
        assert!(Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn layout_starts_with_documented_header() {
        let bytes = checkpoint::<f32>().to_bytes();
        assert_eq!(&bytes[..8], b"CDLNCKPT");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        // 3K+1 parameter tensors, twice more for the Adam moments.
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3 * 7);
        let name_len = u16::from_le_bytes(bytes[16..18].try_into().unwrap()) as usize;
        assert_eq!(&bytes[18..18 + name_len], b"A.0");
    }
}
