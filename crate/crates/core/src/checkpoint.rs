//! Checkpoint files.
//!
//! Layout, in order:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8 | magic `MIMSCKPT` |
//! | 8 | header length `h`, little-endian `u64` |
//! | h | UTF-8 JSON header: version, config, metadata, tensor table |
//! | … | raw tensor payload, `f64` little-endian, in table order |
//! | 32 | SHA-256 of header and payload |

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::tensor::Tensor;
use crate::train::{Regime, TrainConfig};
use crate::vit::{ViTConfig, ViTModel};

pub const MAGIC: &[u8; 8] = b"MIMSCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub regime: Regime,
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: Option<f64>,
    pub loss_history: Vec<f64>,
    pub train_config: TrainConfig,
    /// Regime of the encoder a probe head was trained on.
    pub source_regime: Option<Regime>,
    pub probe_accuracy: Option<f64>,
}

impl TrainingMeta {
    pub fn new(cfg: TrainConfig, history: Vec<f64>) -> Self {
        Self {
            regime: cfg.regime,
            seed: cfg.seed,
            epochs: cfg.epochs,
            final_loss: history.last().copied(),
            loss_history: history,
            train_config: cfg,
            source_regime: None,
            probe_accuracy: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ViTConfig,
    pub params: ParameterSet,
    pub teacher: Option<ParameterSet>,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    set: String,
    name: String,
    shape: Vec<usize>,
    offset: u64,
    length: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ViTConfig,
    meta: TrainingMeta,
    tensors: Vec<TensorEntry>,
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format { offset: offset as u64, message: message.into() }
}

impl Checkpoint {
    pub fn model(&self) -> Result<ViTModel> {
        ViTModel::from_params(self.config.clone(), self.params.clone())
    }

    pub fn teacher_model(&self) -> Result<Option<ViTModel>> {
        self.teacher.as_ref().map(|t| ViTModel::from_params(self.config.clone(), t.clone())).transpose()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut payload = Vec::new();
        let sets = [("params", Some(&self.params)), ("teacher", self.teacher.as_ref())];
        for (set, params) in sets {
            let Some(params) = params else { continue };
            for (name, t) in params.iter() {
                tensors.push(TensorEntry {
                    set: set.to_string(),
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    offset: payload.len() as u64,
                    length: (t.len() * 8) as u64,
                });
                for v in t.data() {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let header = serde_json::to_vec(&Header {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            meta: self.meta.clone(),
            tensors,
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + payload.len() + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        let digest = Sha256::digest(&out[16..]);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 + 32 {
            return Err(format_err(bytes.len(), "file too short for a checkpoint"));
        }
        if &bytes[..8] != MAGIC {
            return Err(format_err(0, "bad magic"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body_end = bytes.len() - 32;
        if header_len > body_end - 16 {
            return Err(format_err(8, format!("header length {header_len} exceeds file size")));
        }
        let computed = Sha256::digest(&bytes[16..body_end]);
        if computed.as_slice() != &bytes[body_end..] {
            return Err(Error::Checksum { stored: crate::hex(&bytes[body_end..]), computed: crate::hex(&computed) });
        }
        let header: Header = serde_json::from_slice(&bytes[16..16 + header_len])?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Version { found: header.format_version, expected: FORMAT_VERSION });
        }
        let payload = &bytes[16 + header_len..body_end];
        let mut params = ParameterSet::new();
        let mut teacher = ParameterSet::new();
        for e in header.tensors {
            let (start, len) = (e.offset as usize, e.length as usize);
            let n: usize = e.shape.iter().product();
            if len != n * 8 || start.checked_add(len).is_none_or(|end| end > payload.len()) {
                return Err(format_err(16 + header_len + start, format!("tensor `{}` out of bounds", e.name)));
            }
            let data = payload[start..start + len]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(e.shape, data)?;
            match e.set.as_str() {
                "params" => params.insert(e.name, t),
                "teacher" => teacher.insert(e.name, t),
                other => return Err(format_err(16, format!("unknown tensor set `{other}`"))),
            }
        }
        ViTModel::from_params(header.config.clone(), params.clone())?;
        let teacher = if teacher.is_empty() {
            None
        } else {
            ViTModel::from_params(header.config.clone(), teacher.clone())?;
            Some(teacher)
        };
        Ok(Self { config: header.config, params, teacher, meta: header.meta })
    }

    /// Hex SHA-256 of the serialised checkpoint.
    pub fn checksum(&self) -> Result<String> {
        Ok(crate::hex(&Sha256::digest(self.to_bytes()?)))
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, ck.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
