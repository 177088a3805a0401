//! Versioned binary checkpoint container.
//!
//! Layout (little-endian): magic `RCGNCKPT`, u32 version, config as canonical
//! JSON text, training metadata, the named parameter tensors, then an optional
//! Adam state whose moment buffers follow parameter order.

use std::path::Path;

use super::config::ModelConfig;
use super::io::{read_file, write_file, Reader, Writer};
use super::net::infer_logits;
use super::params::ParamStore;
use crate::tensorcore::{AdamConfig, AdamState, Tensor};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RCGNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingMeta {
    /// Completed epochs.
    pub epoch: u64,
    pub seed: u64,
    /// Per-step training loss.
    pub loss_history: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore<f32>,
    pub optimizer: Option<AdamState<f32>>,
    pub meta: TrainingMeta,
}

impl Checkpoint {
    /// Freshly initialized parameters, no optimizer state.
    pub fn fresh(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ParamStore::init(&config, seed)?;
        Ok(Checkpoint {
            config,
            params,
            optimizer: None,
            meta: TrainingMeta {
                seed,
                ..Default::default()
            },
        })
    }

    /// Parameters checked against the config.
    pub fn new(config: ModelConfig, params: ParamStore<f32>) -> Result<Self> {
        config.validate()?;
        params.validate_against(&config)?;
        Ok(Checkpoint {
            config,
            params,
            optimizer: None,
            meta: TrainingMeta::default(),
        })
    }

    pub fn logits(&self, volume: &Tensor<f32>) -> Result<Tensor<f32>> {
        infer_logits(&self.config, &self.params, volume)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.str(&self.config.to_canonical());
        w.u64(self.meta.epoch);
        w.u64(self.meta.seed);
        w.u32(self.meta.loss_history.len() as u32);
        for v in &self.meta.loss_history {
            w.bytes(&v.to_le_bytes());
        }
        w.u32(self.params.len() as u32);
        for (name, t) in self.params.iter() {
            w.named_tensor(name, t);
        }
        match &self.optimizer {
            None => w.u8(0),
            Some(s) => {
                w.u8(1);
                for v in [s.config.lr, s.config.beta1, s.config.beta2, s.config.eps] {
                    w.f64(v);
                }
                w.u64(s.step);
                for (m, v) in s.first_moment.iter().zip(&s.second_moment) {
                    w.payload(m);
                    w.payload(v);
                }
            }
        }
        w.buf
    }

    /// Decode and validate; `path` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(r.fail("bad magic, not a checkpoint"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.fail(format!("unsupported checkpoint version {version}")));
        }
        let config = ModelConfig::from_canonical(&r.str()?)?;
        let epoch = r.u64()?;
        let seed = r.u64()?;
        let n_loss = r.u32()? as usize;
        let loss_history = (0..n_loss)
            .map(|_| r.u32().map(f32::from_bits))
            .collect::<Result<Vec<_>>>()?;
        let n = r.u32()? as usize;
        let mut params = ParamStore::default();
        for _ in 0..n {
            let (name, t) = r.named_tensor()?;
            params.insert(name, t).map_err(|e| r.fail(e.to_string()))?;
        }
        params.validate_against(&config)?;
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let config = AdamConfig {
                    lr: r.f64()?,
                    beta1: r.f64()?,
                    beta2: r.f64()?,
                    eps: r.f64()?,
                };
                let step = r.u64()?;
                let mut first_moment = Vec::with_capacity(n);
                let mut second_moment = Vec::with_capacity(n);
                for t in params.tensors() {
                    first_moment.push(r.payload(t.shape())?);
                    second_moment.push(r.payload(t.shape())?);
                }
                Some(AdamState {
                    config,
                    step,
                    first_moment,
                    second_moment,
                })
            }
            other => return Err(r.fail(format!("bad optimizer flag {other}"))),
        };
        r.finish()?;
        Ok(Checkpoint {
            config,
            params,
            optimizer,
            meta: TrainingMeta {
                epoch,
                seed,
                loss_history,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }

    /// Load and require the stored architecture to equal `expected`.
    pub fn load_for(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if &ckpt.config != expected {
            ckpt.params.validate_against(expected)?;
            return Err(Error::CheckpointMismatch(format!(
                "{}: stored config differs from the requested one",
                path.display()
            )));
        }
        Ok(ckpt)
    }
}
