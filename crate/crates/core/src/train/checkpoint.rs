//! Versioned binary checkpoint.
//!
//! Layout, all integers little-endian: magic, `u32` version, then
//! length-prefixed JSON blocks for the model config, training config and log,
//! the named parameter tensors, and an optional Adam state. A checkpoint's id
//! is the SHA-256 of its bytes.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{TrainConfig, TrainLog};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ModelParams};
use crate::numerics::{AdamConfig, AdamState, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FHNETCK1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: Option<TrainConfig>,
    pub params: ModelParams,
    pub adam: Option<AdamState>,
    pub log: Option<TrainLog>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
    fn json<T: Serialize>(&mut self, v: &T) -> Result<()> {
        let s = serde_json::to_vec(v).map_err(|e| Error::Checkpoint(e.to_string()))?;
        self.bytes(&s);
        Ok(())
    }
    fn tensor(&mut self, t: &Tensor) {
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for v in t.data() {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n).map_err(|_| Error::Checkpoint(format!("length {n} out of range")))
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len()?;
        self.take(n)
    }
    fn json<T: DeserializeOwned>(&mut self) -> Result<T> {
        serde_json::from_slice(self.bytes()?).map_err(|e| Error::Checkpoint(e.to_string()))
    }
    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()? as usize;
        let shape = (0..rank).map(|_| self.len()).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint("tensor size overflows".into()))?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(shape, data)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.json(&self.model_config)?;
        w.json(&self.train_config)?;
        w.json(&self.log)?;
        w.u64(self.params.len() as u64);
        for (name, t) in self.params.iter() {
            w.bytes(name.as_bytes());
            w.tensor(t);
        }
        match &self.adam {
            None => w.0.push(0),
            Some(a) => {
                w.0.push(1);
                w.json(&a.config)?;
                w.u64(a.t);
                for t in a.first.iter().chain(&a.second) {
                    w.tensor(t);
                }
            }
        }
        Ok(w.0)
    }

    /// Parses and validates the parameter census against the stored config.
    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let model_config: ModelConfig = r.json()?;
        let train_config: Option<TrainConfig> = r.json()?;
        let log: Option<TrainLog> = r.json()?;
        let n = r.len()?;
        let mut pairs = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let name = std::str::from_utf8(r.bytes()?)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
                .to_string();
            pairs.push((name, r.tensor()?));
        }
        let params = ModelParams::from_named(pairs)?;
        model_config.validate()?;
        params.check_against(&model_config)?;
        let adam = match r.u8()? {
            0 => None,
            1 => {
                let config: AdamConfig = r.json()?;
                let t = r.u64()?;
                let first = (0..params.len()).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
                let second = (0..params.len()).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
                for (m, p) in first.iter().chain(&second).zip(params.tensors().iter().cycle()) {
                    if m.shape() != p.shape() {
                        return Err(Error::Checkpoint("optimizer state shape mismatch".into()));
                    }
                }
                Some(AdamState {
                    config,
                    t,
                    first,
                    second,
                })
            }
            f => return Err(Error::Checkpoint(format!("invalid optimizer flag {f}"))),
        };
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Checkpoint {
            model_config,
            train_config,
            params,
            adam,
            log,
        })
    }

    /// SHA-256 of the serialized bytes, lowercase hex.
    pub fn id(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }

    /// Writes the checkpoint and returns its id.
    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    /// Reads a checkpoint and its id.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck = Self::from_bytes(&bytes)?;
        Ok((ck, hex::encode(Sha256::digest(&bytes))))
    }

    pub fn model(&self) -> Result<Model> {
        Model::from_params(self.model_config.clone(), self.params.clone())
    }
}
