//! Single-file checkpoint: a version byte, then length-prefixed named
//! sections. Arrays are stored as little-endian doubles.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::models::ArchitectureSpec;
use crate::tensor::{Adam, AdamConfig, NamedArrays};
use crate::train::{TrainConfig, TrainState};

use super::IoError;

pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchitectureSpec,
    pub train: TrainConfig,
    pub class_names: Vec<String>,
    pub state: TrainState,
}

#[derive(Serialize, Deserialize)]
struct OptimizerMeta {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

/// Shuffling depends only on the seed and the epoch counter.
#[derive(Serialize, Deserialize)]
struct RngState {
    seed: u64,
    epoch: usize,
}

fn put_section(out: &mut Vec<u8>, name: &str, payload: &[u8]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

fn encode_arrays<'a>(items: impl Iterator<Item = (&'a String, &'a Array2<f64>)>) -> Vec<u8> {
    let items: Vec<_> = items.collect();
    let mut out = Vec::new();
    out.extend_from_slice(&(items.len() as u32).to_le_bytes());
    for (name, a) in items {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(a.nrows() as u64).to_le_bytes());
        out.extend_from_slice(&(a.ncols() as u64).to_le_bytes());
        for v in a.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| IoError::Format(format!("{}: truncated at byte {}", self.what, self.pos)))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, IoError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, len: usize) -> Result<String, IoError> {
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| IoError::Format(format!("{}: invalid UTF-8 name", self.what)))
    }

    fn done(&self) -> bool {
        self.pos == self.data.len()
    }
}

fn decode_arrays(payload: &[u8], what: &'static str) -> Result<BTreeMap<String, Array2<f64>>, IoError> {
    let mut r = Reader { data: payload, pos: 0, what };
    let count = r.u32()?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = r.string(len)?;
        let ndim = r.u32()?;
        if ndim != 2 {
            return Err(IoError::Format(format!("{what}: array `{name}` has {ndim} dimensions, expected 2")));
        }
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let n = rows.checked_mul(cols).ok_or_else(|| IoError::Format(format!("{what}: array `{name}` too large")))?;
        if n > payload.len() / 8 {
            return Err(IoError::Format(format!("{what}: array `{name}` exceeds the section")));
        }
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(r.f64()?);
        }
        out.insert(name, Array2::from_shape_vec((rows, cols), values).expect("length checked"));
    }
    if !r.done() {
        return Err(IoError::Format(format!("{what}: trailing bytes")));
    }
    Ok(out)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![CHECKPOINT_VERSION];
        put_section(&mut out, "arch", &json(&self.arch));
        put_section(&mut out, "train", &json(&self.train));
        put_section(&mut out, "classes", &json(&self.class_names));
        let a = &self.state.adam;
        let meta = OptimizerMeta { lr: a.config.lr, beta1: a.config.beta1, beta2: a.config.beta2, eps: a.config.eps, step: a.step };
        put_section(&mut out, "optimizer", &json(&meta));
        put_section(&mut out, "rng", &json(&RngState { seed: self.train.seed, epoch: self.state.epoch }));
        put_section(&mut out, "params", &encode_arrays(self.state.params.iter()));
        put_section(&mut out, "buffers", &encode_arrays(self.state.buffers.iter()));
        put_section(&mut out, "adam.m", &encode_arrays(a.m.iter()));
        put_section(&mut out, "adam.v", &encode_arrays(a.v.iter()));
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, IoError> {
        let (&version, rest) = data.split_first().ok_or_else(|| IoError::Format("empty checkpoint".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(IoError::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut r = Reader { data: rest, pos: 0, what: "checkpoint" };
        let mut sections: BTreeMap<String, &[u8]> = BTreeMap::new();
        while !r.done() {
            let len = r.u32()? as usize;
            let name = r.string(len)?;
            let size = usize::try_from(r.u64()?).map_err(|_| IoError::Format("section too large".into()))?;
            sections.insert(name, r.take(size)?);
        }
        let get = |name: &str| sections.get(name).copied().ok_or_else(|| IoError::Format(format!("missing section `{name}`")));
        let arch: ArchitectureSpec = de("arch", get("arch")?)?;
        let train: TrainConfig = de("train", get("train")?)?;
        let class_names: Vec<String> = de("classes", get("classes")?)?;
        let meta: OptimizerMeta = de("optimizer", get("optimizer")?)?;
        let rng: RngState = de("rng", get("rng")?)?;
        let params: NamedArrays = decode_arrays(get("params")?, "params")?.into_iter().collect();
        let buffers: NamedArrays = decode_arrays(get("buffers")?, "buffers")?.into_iter().collect();
        let m = decode_arrays(get("adam.m")?, "adam.m")?;
        let v = decode_arrays(get("adam.v")?, "adam.v")?;
        let config = AdamConfig { lr: meta.lr, beta1: meta.beta1, beta2: meta.beta2, eps: meta.eps };
        let adam = Adam { config, step: meta.step, m, v };
        let state = TrainState { params, buffers, adam, epoch: rng.epoch };
        Ok(Self { arch, train: TrainConfig { seed: rng.seed, ..train }, class_names, state })
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| IoError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let data = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
        Self::from_bytes(&data)
    }
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("plain data serialises")
}

fn de<T: for<'de> Deserialize<'de>>(name: &str, payload: &[u8]) -> Result<T, IoError> {
    serde_json::from_slice(payload).map_err(|e| IoError::Format(format!("section `{name}`: {e}")))
}
