//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "CORFMT\0\x01"
//! version  u32      currently 1
//! meta_len u64      length of the JSON metadata block
//! meta     JSON     {"config": ModelConfig, "vocab": [token..],
//!                    "tensors": [{"name", "rows", "cols"}..], "state": {..}|null}
//! data     f64 LE   every tensor in `tensors` order, row-major
//! ```
//!
//! Optimizer moments, when present, are stored as extra tensors named
//! `adam.m/<param>` and `adam.v/<param>`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::Model;
use crate::config::ModelConfig;
use crate::nn::{ParamStore, Tensor};
use crate::vocab::Vocab;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CORFMT\0\x01";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub step: u64,
    pub epoch: usize,
    pub best_valid_mt: Option<f64>,
    pub best_valid_coref: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: ModelConfig,
    vocab: Vocab,
    tensors: Vec<TensorHeader>,
    state: Option<TrainMeta>,
}

/// Everything a checkpoint file holds.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub state: Option<TrainMeta>,
    /// Adam first and second moments aligned with `model.params`.
    pub moments: Option<(Vec<Tensor>, Vec<Tensor>)>,
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    state: Option<&TrainMeta>,
    moments: Option<(&[Tensor], &[Tensor])>,
) -> Result<()> {
    let mut named: Vec<(String, &Tensor)> = model.params.iter().map(|(n, t)| (n.to_string(), t)).collect();
    if let Some((m, v)) = moments {
        let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_string()).collect();
        named.extend(names.iter().zip(m).map(|(n, t)| (format!("adam.m/{n}"), t)));
        named.extend(names.iter().zip(v).map(|(n, t)| (format!("adam.v/{n}"), t)));
    }
    let meta = Meta {
        config: model.config.clone(),
        vocab: model.vocab.clone(),
        tensors: named
            .iter()
            .map(|(n, t)| TensorHeader {
                name: n.clone(),
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect(),
        state: state.cloned(),
    };
    let meta = serde_json::to_vec(&meta)?;
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(VERSION).map_err(io)?;
    w.write_u64::<LittleEndian>(meta.len() as u64).map_err(io)?;
    w.write_all(&meta).map_err(io)?;
    for (_, t) in &named {
        for &x in t.data() {
            w.write_f64::<LittleEndian>(x).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let io = |e| Error::io(path, e);
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))?;
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let len = r.read_u64::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
    let mut meta = vec![0u8; len];
    r.read_exact(&mut meta).map_err(|_| bad("truncated metadata"))?;
    let meta: Meta = serde_json::from_slice(&meta)?;
    let mut params = ParamStore::new();
    let mut m = Vec::new();
    let mut v = Vec::new();
    for h in &meta.tensors {
        let mut data = vec![0.0; h.rows * h.cols];
        r.read_f64_into::<LittleEndian>(&mut data)
            .map_err(|_| bad(&format!("truncated data for {}", h.name)))?;
        let t = Tensor::from_vec(h.rows, h.cols, data);
        if h.name.starts_with("adam.m/") {
            m.push(t);
        } else if h.name.starts_with("adam.v/") {
            v.push(t);
        } else {
            params.insert(h.name.clone(), t);
        }
    }
    if meta.config.vocab_size != meta.vocab.len() {
        return Err(bad("vocabulary size disagrees with config"));
    }
    let fresh = Model::new(meta.config.clone(), meta.vocab.clone())?;
    for (name, t) in fresh.params.iter() {
        match params.by_name(name) {
            Some(p) if p.shape() == t.shape() => {}
            Some(p) => return Err(bad(&format!("{name} has shape {:?}, expected {:?}", p.shape(), t.shape()))),
            None => return Err(bad(&format!("missing tensor {name}"))),
        }
    }
    if params.len() != fresh.params.len() {
        return Err(bad("unexpected extra tensors"));
    }
    let moments = if m.is_empty() { None } else { Some((m, v)) };
    Ok(Checkpoint {
        model: Model::from_parts(meta.config, meta.vocab, params),
        state: meta.state,
        moments,
    })
}

impl Model {
    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, self, None, None)
    }

    pub fn load(path: &Path) -> Result<Model> {
        Ok(load_checkpoint(path)?.model)
    }

    /// Loads a checkpoint and refuses it when its architecture disagrees with
    /// `expected`.
    pub fn load_checked(path: &Path, expected: &ModelConfig) -> Result<Model> {
        let model = Model::load(path)?;
        expected.check_compatible(&model.config)?;
        Ok(model)
    }
}
