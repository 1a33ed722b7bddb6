//! Binary checkpoint archive: magic, a JSON header, then raw little-endian tensor buffers.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::nn::ParamStore;
use crate::train::{Adam, AdamConfig, TrainConfig};

pub const MAGIC: &[u8; 8] = b"MSCKPT\0\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Where the trainer's random streams continue from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub store: ParamStore,
    pub adam: Adam,
    pub epoch: usize,
    pub step: usize,
    pub rng: RngState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Group {
    Param,
    AdamM,
    AdamV,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    group: Group,
    shape: [usize; 2],
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    dtype: Dtype,
    config_hash: String,
    model_config: ModelConfig,
    train_config: TrainConfig,
    epoch: usize,
    step: usize,
    rng: RngState,
    adam_config: AdamConfig,
    adam_t: u64,
    tensors: Vec<TensorEntry>,
}

/// SHA-256 over the JSON of both configs.
pub fn config_hash(model: &ModelConfig, train: &TrainConfig) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(model).expect("config serialises"));
    h.update(serde_json::to_vec(train).expect("config serialises"));
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn corrupt(path: &Path, what: impl std::fmt::Display) -> Error {
    Error::Data(format!("{}: {what}", path.display()))
}

impl Checkpoint {
    /// A fresh checkpoint for an untrained model.
    pub fn from_model(model: &Model, train_config: TrainConfig) -> Self {
        Self {
            model_config: model.config.clone(),
            adam: Adam::new(train_config.adam, &model.store),
            store: model.store.clone(),
            rng: RngState {
                seed: train_config.seed,
                stream: 0,
                word_pos: 0,
            },
            train_config,
            epoch: 0,
            step: 0,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.save_as(path, Dtype::F64)
    }

    /// Writes atomically via a sibling temporary file.
    pub fn save_as(&self, path: &Path, dtype: Dtype) -> Result<()> {
        let mut tensors = Vec::new();
        let mut body: Vec<u8> = Vec::new();
        let groups = [
            (
                Group::Param,
                self.store.iter().map(|(n, v)| (n.to_string(), v)).collect::<Vec<_>>(),
            ),
            (
                Group::AdamM,
                self.store
                    .iter()
                    .map(|(n, _)| n.to_string())
                    .zip(&self.adam.m)
                    .collect(),
            ),
            (
                Group::AdamV,
                self.store
                    .iter()
                    .map(|(n, _)| n.to_string())
                    .zip(&self.adam.v)
                    .collect(),
            ),
        ];
        for (group, items) in groups {
            for (name, v) in items {
                tensors.push(TensorEntry {
                    name,
                    group,
                    shape: [v.nrows(), v.ncols()],
                    offset: body.len(),
                });
                for &x in v.iter() {
                    match dtype {
                        Dtype::F64 => body.extend_from_slice(&x.to_le_bytes()),
                        Dtype::F32 => body.extend_from_slice(&(x as f32).to_le_bytes()),
                    }
                }
            }
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            dtype,
            config_hash: config_hash(&self.model_config, &self.train_config),
            model_config: self.model_config.clone(),
            train_config: self.train_config.clone(),
            epoch: self.epoch,
            step: self.step,
            rng: self.rng,
            adam_config: self.adam.config,
            adam_t: self.adam.t,
            tensors,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Data(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + body.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&body);
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, out)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt(path, "not a checkpoint file"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let json = bytes
            .get(16..16 + len)
            .ok_or_else(|| corrupt(path, "truncated header"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            record: "header".into(),
            message: e.to_string(),
        })?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: header.format_version,
                expected: FORMAT_VERSION,
            });
        }
        if header.config_hash != config_hash(&header.model_config, &header.train_config) {
            return Err(corrupt(path, "config hash mismatch"));
        }
        let body = &bytes[16 + len..];
        let w = header.dtype.width();
        let mut params = Vec::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for t in &header.tensors {
            let n = t.shape[0] * t.shape[1];
            let raw = body
                .get(t.offset..t.offset + n * w)
                .ok_or_else(|| corrupt(path, format!("truncated tensor {}", t.name)))?;
            let data: Vec<f64> = match header.dtype {
                Dtype::F64 => raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
                Dtype::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
            };
            let a = Array2::from_shape_vec((t.shape[0], t.shape[1]), data).expect("length checked");
            match t.group {
                Group::Param => params.push((t.name.clone(), a)),
                Group::AdamM => m.push(a),
                Group::AdamV => v.push(a),
            }
        }
        if m.len() != params.len() || v.len() != params.len() {
            return Err(corrupt(path, "optimiser state does not match the parameters"));
        }
        let mut store = ParamStore::default();
        for (name, a) in params {
            store.insert(name, a);
        }
        Ok(Self {
            model_config: header.model_config,
            train_config: header.train_config,
            store,
            adam: Adam {
                config: header.adam_config,
                m,
                v,
                t: header.adam_t,
            },
            epoch: header.epoch,
            step: header.step,
            rng: header.rng,
        })
    }

    /// Rebuilds the network and copies the stored weights into it.
    pub fn model(&self) -> Result<Model> {
        let mut model = Model::new(self.model_config.clone(), 0)?;
        let map = self.store.iter().map(|(n, v)| (n.to_string(), v.clone())).collect();
        model.store.load_from(&map)?;
        Ok(model)
    }
}
