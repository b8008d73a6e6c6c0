//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "IBNERCKP"
//! version    u32      FORMAT_VERSION
//! header     u64 length + UTF-8 JSON (config, vocabulary, type inventory,
//!            tensor table, optimizer and RNG state, loss history)
//! payload    f64 values of every tensor in table order
//! trailer    u64 payload length in bytes, then "ENDCKPT\0"
//! ```
//!
//! Files are read completely and validated before any state is built.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::corpus::{EntityTypes, Vocabulary};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig, Moments};
use crate::trainer::{LossRecord, TrainState};
use crate::{Model, ParamStore, Real, Tensor};

pub const MAGIC: &[u8; 8] = b"IBNERCKP";
const TRAILER: &[u8; 8] = b"ENDCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocabulary,
    types: EntityTypes,
    params: Vec<TensorMeta>,
    step: u64,
    epoch: usize,
    adam: AdamConfig<Real>,
    /// Parameter name → update count; moments follow the parameters in the payload.
    moments: BTreeMap<String, u64>,
    rng: ChaCha8Rng,
    pretrain_history: Vec<LossRecord>,
    history: Vec<LossRecord>,
}

pub struct Checkpoint {
    pub model: Model,
    pub state: TrainState,
}

pub fn encode(model: &Model, state: &TrainState) -> Result<Vec<u8>> {
    let params: Vec<TensorMeta> = model
        .params
        .iter()
        .map(|(_, e)| TensorMeta {
            name: e.name.clone(),
            shape: e.value.shape().to_vec(),
        })
        .collect();
    let header = Header {
        config: model.config.clone(),
        vocab: model.vocab.clone(),
        types: model.types.clone(),
        params,
        step: state.step,
        epoch: state.epoch,
        adam: state.optimizer.config,
        moments: state
            .optimizer
            .moments
            .iter()
            .map(|(k, m)| (k.clone(), m.t))
            .collect(),
        rng: state.rng.clone(),
        pretrain_history: state.pretrain_history.clone(),
        history: state.history.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut payload: Vec<u8> = Vec::new();
    for (_, e) in model.params.iter() {
        for v in e.value.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    for (name, m) in &state.optimizer.moments {
        let shape = model
            .params
            .by_name(name)
            .ok_or_else(|| {
                Error::Checkpoint(format!("optimizer state for unknown parameter `{name}`"))
            })?
            .shape();
        if m.m.shape() != shape || m.v.shape() != shape {
            return Err(Error::Checkpoint(format!(
                "optimizer state shape mismatch for `{name}`"
            )));
        }
        for v in m.m.data().iter().chain(m.v.data()) {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(8 + 4 + 8 + json.len() + payload.len() + 16);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(TRAILER);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated file while reading {what}"
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<Real>> {
        let raw = self.take(n * 8, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Checkpoint(
            "not a checkpoint file (bad magic)".into(),
        ));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let hlen = r.u64("header length")? as usize;
    let header: Header = serde_json::from_slice(r.take(hlen, "header")?)
        .map_err(|e| Error::Checkpoint(format!("corrupt header: {e}")))?;
    let payload_start = r.pos;

    let mut params = ParamStore::new();
    for meta in &header.params {
        let n: usize = meta.shape.iter().product();
        let data = r.f64s(n, &meta.name)?;
        params.insert(meta.name.clone(), Tensor::new(meta.shape.clone(), data)?)?;
    }
    let mut moments = BTreeMap::new();
    for (name, &t) in &header.moments {
        let shape = params
            .by_name(name)
            .ok_or_else(|| {
                Error::Checkpoint(format!("optimizer state for unknown parameter `{name}`"))
            })?
            .shape()
            .to_vec();
        let n: usize = shape.iter().product();
        let m = Tensor::new(shape.clone(), r.f64s(n, name)?)?;
        let v = Tensor::new(shape, r.f64s(n, name)?)?;
        moments.insert(name.clone(), Moments { m, v, t });
    }
    let payload_len = (r.pos - payload_start) as u64;
    if r.u64("trailer")? != payload_len || r.take(8, "trailer")? != TRAILER {
        return Err(Error::Checkpoint(
            "payload length mismatch or missing trailer".into(),
        ));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after trailer",
            bytes.len() - r.pos
        )));
    }

    let mut vocab = header.vocab;
    vocab.reindex();
    let model = Model::from_parts(header.config, vocab, header.types, params)?;
    let state = TrainState {
        step: header.step,
        epoch: header.epoch,
        optimizer: Adam {
            config: header.adam,
            moments,
        },
        rng: header.rng,
        pretrain_history: header.pretrain_history,
        history: header.history,
    };
    Ok(Checkpoint { model, state })
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model, state: &TrainState) -> Result<()> {
    let bytes = encode(model, state)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    decode(&bytes)
}
