//! Versioned binary model checkpoints: every parameter tensor by name, the
//! vocabulary fingerprint, and the config snapshot that produced the run.

use std::io::{BufReader, BufWriter};
use std::path::Path;

use thiserror::Error;

use crate::binio::{BinError, BinReader, BinWriter};
use crate::config::{Config, ConfigError};
use crate::corpus::EmbeddingTable;
use crate::init::stream_rng;
use crate::model::{ModelDims, ModelParams};
use crate::tensor::Tensor;

const MAGIC: [u8; 4] = *b"ANRK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Bin(#[from] BinError),
    #[error("embedded config is invalid: {0}")]
    Config(#[from] ConfigError),
    #[error("checkpoint missing parameter {0}")]
    MissingParam(String),
    #[error("checkpoint has unknown parameter {0}")]
    UnknownParam(String),
    #[error("parameter {name}: shape {found:?} does not match model {expected:?}")]
    ShapeMismatch { name: String, found: Vec<usize>, expected: Vec<usize> },
}

pub struct Checkpoint {
    pub config: Config,
    pub vocab_fingerprint: u64,
    pub best_epoch: usize,
    pub best_val_auc: Option<f64>,
    pub params: ModelParams,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let file = std::fs::File::create(path).map_err(BinError::from)?;
    let mut w = BinWriter::new(BufWriter::new(file));
    w.header(MAGIC, CHECKPOINT_VERSION)?;
    w.str(&ckpt.config.to_key_values())?;
    w.u64(ckpt.vocab_fingerprint)?;
    w.u64(ckpt.best_epoch as u64)?;
    w.f64(ckpt.best_val_auc.unwrap_or(f64::NAN))?;

    let dims = &ckpt.params.dims;
    w.u64(dims.vocab_size as u64)?;
    w.u64(dims.n_categories as u64)?;
    w.u64(dims.n_subcategories as u64)?;

    let params = ckpt.params.visit();
    w.u64(params.len() as u64)?;
    for (name, tensor) in params {
        w.str(&name)?;
        w.usize_slice(tensor.shape())?;
        w.f64_slice(tensor.values())?;
    }
    w.finish()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let file = std::fs::File::open(path).map_err(BinError::from)?;
    let mut r = BinReader::new(BufReader::new(file));
    r.expect_header(MAGIC, CHECKPOINT_VERSION)?;
    let config = Config::from_str_contents(&r.str()?)?;
    let vocab_fingerprint = r.u64()?;
    let best_epoch = r.u64()? as usize;
    let auc = r.f64()?;
    let best_val_auc = if auc.is_nan() { None } else { Some(auc) };

    let vocab_size = r.u64()? as usize;
    let n_categories = r.u64()? as usize;
    let n_subcategories = r.u64()? as usize;
    let dims = ModelDims::from_config(&config, vocab_size, n_categories, n_subcategories);

    let n_params = r.u64()? as usize;
    let mut stored: std::collections::HashMap<String, Tensor> =
        std::collections::HashMap::with_capacity(n_params);
    for _ in 0..n_params {
        let name = r.str()?;
        let shape = r.usize_vec()?;
        let values = r.f64_vec()?;
        if shape.iter().product::<usize>() != values.len() {
            return Err(BinError::Corrupt(format!("parameter {name}: shape/value mismatch")).into());
        }
        stored.insert(name, Tensor::new(shape, values));
    }

    // Build a skeleton with the right structure, then fill by name.
    let zero_table = EmbeddingTable {
        table: Tensor::zeros(vec![dims.vocab_size, dims.embedding_dim]),
        trainable: true,
    };
    let mut params = ModelParams::init(dims, &zero_table, &mut stream_rng(0, "checkpoint-load"));
    let expected: Vec<String> = params.visit().into_iter().map(|(n, _)| n).collect();
    for name in stored.keys() {
        if !expected.contains(name) {
            return Err(CheckpointError::UnknownParam(name.clone()));
        }
    }
    for (name, tensor) in params.visit_mut() {
        let loaded =
            stored.remove(&name).ok_or_else(|| CheckpointError::MissingParam(name.clone()))?;
        if loaded.shape() != tensor.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name,
                found: loaded.shape().to_vec(),
                expected: tensor.shape().to_vec(),
            });
        }
        *tensor = loaded;
    }

    Ok(Checkpoint { config, vocab_fingerprint, best_epoch, best_val_auc, params })
}
