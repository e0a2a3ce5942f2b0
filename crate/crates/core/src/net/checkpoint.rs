//! Model checkpoints in the shared container format (magic `SDMN`). The config
//! block holds the model's `key=value` lines plus provenance keys prefixed
//! `meta.`; records are named `param/<name>` or `buffer/<name>`.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use super::model::Model;
use super::params::ParamStore;
use super::ModelConfig;
use crate::container::{self, ContainerError, Record};
use crate::tensor::{Scalar, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SDMN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a checkpoint: magic {found:?}, expected \"SDMN\" (format version {CHECKPOINT_VERSION})")]
    BadMagic { found: [u8; 4] },
    #[error("checkpoint format version {found} unsupported (this build reads version {CHECKPOINT_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("checkpoint truncated: needed {needed} bytes at offset {offset}, file has {len}")]
    Truncated { offset: usize, needed: usize, len: usize },
    #[error("checkpoint checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("checkpoint config: {0}")]
    Config(String),
    #[error("tensor {name}: dtype code {found}, expected {expected}")]
    Dtype { name: String, found: u8, expected: u8 },
    #[error("tensor/config disagreement: {0}")]
    Shape(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

impl From<ContainerError> for CheckpointError {
    fn from(e: ContainerError) -> Self {
        match e {
            ContainerError::BadMagic { found, .. } => Self::BadMagic { found },
            ContainerError::UnsupportedVersion { found, .. } => Self::UnsupportedVersion { found },
            ContainerError::Truncated { offset, needed, len } => Self::Truncated { offset, needed, len },
            ContainerError::Checksum { stored, computed } => Self::Checksum { stored, computed },
            ContainerError::Malformed(m) => Self::Malformed(m),
        }
    }
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

fn record<T: Scalar>(name: String, t: &Tensor<T>) -> Record {
    Record { name, dtype: T::DTYPE, dims: t.shape().to_vec(), bytes: T::to_le_bytes_vec(t.data()) }
}

pub fn encode_checkpoint<T: Scalar>(model: &Model<T>, meta: &BTreeMap<String, String>) -> Vec<u8> {
    let mut config = model.config.to_text();
    for (k, v) in meta {
        config.push_str(&format!("meta.{k}={v}\n"));
    }
    let records: Vec<Record> = model
        .params
        .iter()
        .map(|(n, t)| record(format!("param/{n}"), t))
        .chain(model.buffers.iter().map(|(n, t)| record(format!("buffer/{n}"), t)))
        .collect();
    container::encode(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, &config, &records)
}

/// Parse and verify a checkpoint. Returns the model and its `meta.*` entries
/// (keys without the prefix).
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<(Model<T>, BTreeMap<String, String>)> {
    let (text, records) = container::decode(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, bytes)?;
    let (config, extra) = ModelConfig::from_text(&text).map_err(|e| CheckpointError::Config(e.to_string()))?;
    let mut meta = BTreeMap::new();
    for (k, v) in extra {
        match k.strip_prefix("meta.") {
            Some(key) => meta.insert(key.to_string(), v),
            None => return Err(CheckpointError::Config(format!("unknown config key {k}"))),
        };
    }
    let (mut params, mut buffers) = (ParamStore::default(), ParamStore::default());
    for r in records {
        if r.dtype != T::DTYPE {
            return Err(CheckpointError::Dtype { name: r.name, found: r.dtype, expected: T::DTYPE });
        }
        let (store, name) = if let Some(n) = r.name.strip_prefix("param/") {
            (&mut params, n)
        } else if let Some(n) = r.name.strip_prefix("buffer/") {
            (&mut buffers, n)
        } else {
            return Err(CheckpointError::Malformed(format!("tensor {} has no param/ or buffer/ prefix", r.name)));
        };
        if store.id(name).is_some() {
            return Err(CheckpointError::Malformed(format!("duplicate tensor {}", r.name)));
        }
        let t = Tensor::new(r.dims.clone(), T::from_le_bytes_slice(&r.bytes)).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        store.add(name, t);
    }
    let model = Model::from_parts(&config, params, buffers).map_err(|e| CheckpointError::Shape(e.to_string()))?;
    Ok((model, meta))
}

pub fn checkpoint_save<T: Scalar>(model: &Model<T>, meta: &BTreeMap<String, String>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model, meta)).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
}

pub fn checkpoint_load<T: Scalar>(path: &Path) -> Result<(Model<T>, BTreeMap<String, String>)> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
    decode_checkpoint(&bytes)
}
