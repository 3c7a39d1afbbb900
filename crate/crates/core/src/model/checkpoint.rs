//! Little-endian named-tensor snapshot.
//!
//! ```text
//! "S360"  u32 version  u64 iteration
//! u32 header_len  header_len bytes of JSON {"model": ModelConfig, "meta": any}
//! u32 record_count
//! record: u32 name_len, name (UTF-8), u8 dtype (0 = f32, 1 = f64),
//!         u8 rank, rank × u64 dims, raw values
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::layers::Module;
use crate::tensor::{DType, Element};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"S360";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    fn to_elements<E: Element>(&self) -> Vec<E> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| E::from_f64_lossy(x as f64)).collect(),
            TensorData::F64(v) => v.iter().map(|&x| E::from_f64_lossy(x)).collect(),
        }
    }

    fn from_elements<E: Element>(values: &[E]) -> Self {
        match E::DTYPE {
            DType::F32 => TensorData::F32(values.iter().map(|v| v.to_f64_lossy() as f32).collect()),
            DType::F64 => TensorData::F64(values.iter().map(|v| v.to_f64_lossy()).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: TensorData,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub iteration: u64,
    /// Free-form run metadata (optimizer settings, step counts).
    pub meta: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(config: ModelConfig) -> Self {
        Checkpoint {
            config,
            iteration: 0,
            meta: serde_json::Value::Null,
            tensors: Vec::new(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn insert<E: Element>(&mut self, name: &str, dims: &[usize], values: &[E]) {
        let record = NamedTensor {
            name: name.to_string(),
            dims: dims.to_vec(),
            data: TensorData::from_elements(values),
        };
        match self.tensors.iter_mut().find(|t| t.name == name) {
            Some(slot) => *slot = record,
            None => self.tensors.push(record),
        }
    }

    /// Reads `name` as a flat vector, checking its length.
    pub fn values<E: Element>(&self, name: &str, numel: usize) -> Result<Vec<E>> {
        let t = self
            .get(name)
            .ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))?;
        if t.data.len() != numel {
            return Err(Error::Format(format!(
                "tensor `{name}` has {} values, expected {numel}",
                t.data.len()
            )));
        }
        Ok(t.data.to_elements())
    }

    /// Stores every parameter of `module` under `prefix`.
    pub fn insert_module<E: Element, M: Module<E>>(&mut self, prefix: &str, module: &M) {
        module.visit(prefix, &mut |name, t| self.insert(name, t.shape(), t.data()));
    }

    /// Overwrites the parameters of `module` from the records under `prefix`.
    /// Missing parameters, shape mismatches and records under `prefix` that
    /// the module does not own are all errors.
    pub fn load_module<E: Element, M: Module<E>>(&self, prefix: &str, module: &mut M) -> Result<()> {
        let mut seen = BTreeSet::new();
        let mut failure = None;
        module.visit_mut(prefix, &mut |name, t| {
            if failure.is_some() {
                return;
            }
            seen.insert(name.to_string());
            let res = match self.get(name) {
                None => Err(Error::Format(format!("missing tensor `{name}`"))),
                Some(rec) if rec.dims != t.shape() => Err(Error::Format(format!(
                    "tensor `{name}` has dims {:?}, model expects {:?}",
                    rec.dims,
                    t.shape()
                ))),
                Some(rec) => t.set_data(rec.data.to_elements()),
            };
            if let Err(e) = res {
                failure = Some(e);
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        let scope = format!("{prefix}.");
        if let Some(extra) = self
            .tensors
            .iter()
            .find(|t| t.name.starts_with(&scope) && !seen.contains(&t.name))
        {
            return Err(Error::Format(format!("unknown tensor `{}`", extra.name)));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            model: self.config.clone(),
            meta: self.meta.clone(),
        })?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&u32_len(header.len())?.to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&u32_len(self.tensors.len())?.to_le_bytes());
        for t in &self.tensors {
            let expected: usize = t.dims.iter().product();
            if expected != t.data.len() || t.dims.len() > u8::MAX as usize {
                return Err(Error::Format(format!("tensor `{}` is malformed", t.name)));
            }
            out.extend_from_slice(&u32_len(t.name.len())?.to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(match t.data.dtype() {
                DType::F32 => 0,
                DType::F64 => 1,
            });
            out.push(t.dims.len() as u8);
            for &d in &t.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &t.data {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let iteration = r.u64()?;
        let header_len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len)?)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let dtype = r.u8()?;
            let rank = r.u8()? as usize;
            let dims = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("tensor `{name}` is too large")))?;
            let data = match dtype {
                0 => TensorData::F32(
                    r.take(numel.checked_mul(4).ok_or_else(truncated)?)?
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect(),
                ),
                1 => TensorData::F64(
                    r.take(numel.checked_mul(8).ok_or_else(truncated)?)?
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect(),
                ),
                other => return Err(Error::Format(format!("unknown dtype tag {other}"))),
            };
            tensors.push(NamedTensor { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after last record".into()));
        }
        Ok(Checkpoint {
            config: header.model,
            iteration,
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn u32_len(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("length {n} exceeds u32")))
}

fn truncated() -> Error {
    Error::Format("file is truncated".into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or_else(truncated)?;
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
}
