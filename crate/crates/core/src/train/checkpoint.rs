//! Binary checkpoint format.
//!
//! Layout (little-endian): magic `HLGT`, `u32` version, `u64` metadata
//! length, metadata JSON, `u64` tensor count, then per tensor `u32` name
//! length, name bytes, `u32` rank, `u64` dims, `u8` dtype (0 = f32,
//! 1 = f64) and the raw payload. A CRC32 of everything before it closes
//! the file.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Precision, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{Model, Vocab};
use crate::numeric::{OptimState, ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"HLGT";
pub const FORMAT_VERSION: u32 = 1;

const FIRST_MOMENT: &str = "adam.m.";
const SECOND_MOMENT: &str = "adam.v.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub vocab: Vocab,
    /// Epochs completed.
    pub epoch: usize,
    /// Optimizer scalars; the moments travel as tensors.
    pub optim: OptimState,
    pub rng: ChaCha8Rng,
    pub valid_score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: Vec<(String, Tensor)>,
    pub first_moments: Vec<(String, Tensor)>,
    pub second_moments: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn capture(
        config: &TrainConfig,
        model: &Model,
        store: &ParamStore,
        optim: &OptimState,
        rng: &ChaCha8Rng,
        epoch: usize,
        valid_score: Option<f64>,
    ) -> Self {
        let named = |ts: &[Tensor]| -> Vec<(String, Tensor)> {
            store.iter().zip(ts).map(|((_, n, _), t)| (n.to_string(), t.clone())).collect()
        };
        Checkpoint {
            meta: CheckpointMeta {
                config: config.clone(),
                vocab: model.vocab.clone(),
                epoch,
                optim: optim.without_moments(),
                rng: rng.clone(),
                valid_score,
            },
            params: store.iter().map(|(_, n, t)| (n.to_string(), t.clone())).collect(),
            first_moments: named(optim.first_moments()),
            second_moments: named(optim.second_moments()),
        }
    }

    /// Rebuilds the model and fills in the stored parameter values.
    pub fn restore(&self) -> Result<(Model, ParamStore)> {
        let cfg = &self.meta.config;
        let (model, mut store) =
            Model::new(&cfg.model(), self.meta.vocab.clone(), cfg.constant_table()?, cfg.seed)?;
        if self.params.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model expects {}",
                self.params.len(),
                store.len()
            )));
        }
        for (name, t) in &self.params {
            let id = store.id(name).map_err(|_| Error::Checkpoint(format!("unexpected parameter `{name}`")))?;
            if store.get(id).shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    store.get(id).shape()
                )));
            }
            *store.get_mut(id) = t.clone();
        }
        Ok((model, store))
    }

    /// Optimizer state with moments, aligned to `store`.
    pub fn optimizer(&self, store: &ParamStore) -> Result<OptimState> {
        let mut state = self.meta.optim.clone();
        let lookup = |list: &[(String, Tensor)]| -> Result<Vec<Tensor>> {
            store
                .iter()
                .map(|(_, name, t)| {
                    list.iter()
                        .find(|(n, _)| n == name)
                        .map(|(_, m)| m.clone())
                        .filter(|m| m.shape() == t.shape())
                        .ok_or_else(|| Error::Checkpoint(format!("missing optimizer moment for `{name}`")))
                })
                .collect()
        };
        state.set_moments(lookup(&self.first_moments)?, lookup(&self.second_moments)?);
        Ok(state)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor, precision: Precision) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.shape().len() as u32);
    for &d in t.shape() {
        put_u64(out, d as u64);
    }
    out.push(precision.tag());
    match precision {
        Precision::F32 => {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Precision::F64 => {
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}

pub fn encode_checkpoint(cp: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    let meta = serde_json::to_vec(&cp.meta)?;
    put_u64(&mut out, meta.len() as u64);
    out.extend_from_slice(&meta);
    let count = cp.params.len() + cp.first_moments.len() + cp.second_moments.len();
    put_u64(&mut out, count as u64);
    // Parameters already hold f32-representable values in f32 mode; moments
    // always keep full precision so resumed runs match uninterrupted ones.
    for (n, t) in &cp.params {
        put_tensor(&mut out, n, t, cp.meta.config.precision);
    }
    for (n, t) in &cp.first_moments {
        put_tensor(&mut out, &format!("{FIRST_MOMENT}{n}"), t, Precision::F64);
    }
    for (n, t) in &cp.second_moments {
        put_tensor(&mut out, &format!("{SECOND_MOMENT}{n}"), t, Precision::F64);
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    Ok(out)
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
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflow".into()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut r = Reader { buf: body, pos: 8 };
    let meta_len = r.len()?;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)?;
    let count = r.len()?;
    let mut cp = Checkpoint {
        meta,
        params: Vec::new(),
        first_moments: Vec::new(),
        second_moments: Vec::new(),
    };
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let dims: Vec<usize> = (0..rank).map(|_| r.len()).collect::<Result<_>>()?;
        let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel.ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` is too large")))?;
        let data: Vec<f64> = match r.take(1)?[0] {
            0 => r
                .take(numel.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            1 => r
                .take(numel.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
            t => return Err(Error::Checkpoint(format!("unknown dtype tag {t} for `{name}`"))),
        };
        let t = Tensor::new(dims, data)?;
        if let Some(n) = name.strip_prefix(FIRST_MOMENT) {
            cp.first_moments.push((n.to_string(), t));
        } else if let Some(n) = name.strip_prefix(SECOND_MOMENT) {
            cp.second_moments.push((n.to_string(), t));
        } else {
            cp.params.push((name, t));
        }
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after tensors".into()));
    }
    Ok(cp)
}

pub fn save_checkpoint(path: &Path, cp: &Checkpoint) -> Result<()> {
    let bytes = encode_checkpoint(cp)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
