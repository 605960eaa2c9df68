//! Binary checkpoint container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes  "LDAMCKPT"
//! version      u32      currently 1
//! header_len   u32
//! header       UTF-8 key=value lines: model config, then `meta.*` entries
//! n_tensors    u32
//! per tensor:  name_len u32, name bytes, ndim u32, dims u64×ndim, data f64×len
//! has_adam     u8       0 or 1
//! if has_adam: step u64, lr f64, beta1 f64, beta2 f64, eps f64,
//!              then m and v for every tensor in order, f64×len each
//! epochs       u64      epochs completed
//! digest       32 bytes SHA-256 of every preceding byte
//! ```
//!
//! Any failed read, digest mismatch, or trailing byte is reported as a corrupt file.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::{format_key_values, parse_key_values, ModelConfig};
use super::params::{param_names, ModelParams};
use crate::data::TaskSchema;
use crate::error::{LdamError, Result};
use crate::numerics::{AdamConfig, AdamState, Tensor};

pub const MAGIC: &[u8; 8] = b"LDAMCKPT";
pub const VERSION: u32 = 1;
const META_PREFIX: &str = "meta.";
/// Metadata key holding the task schema as JSON.
pub const META_SCHEMA: &str = "schema";
/// Metadata key holding the embedding source, `file:PATH` or `toy:SEED:DIM`.
pub const META_EMBEDDINGS: &str = "embeddings";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    /// Free-form strings such as the schema and the embedding source.
    pub metadata: BTreeMap<String, String>,
    pub optimizer: Option<AdamState>,
    pub epochs_completed: usize,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: ModelParams) -> Self {
        Self { config, params, metadata: BTreeMap::new(), optimizer: None, epochs_completed: 0 }
    }

    /// The task schema recorded at training time.
    pub fn schema(&self) -> Result<TaskSchema> {
        let text =
            self.metadata.get(META_SCHEMA).ok_or_else(|| LdamError::CorruptCheckpoint("no schema recorded".into()))?;
        let schema: TaskSchema =
            serde_json::from_str(text).map_err(|e| LdamError::CorruptCheckpoint(format!("schema: {e}")))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());

        let mut header = self.config.to_map();
        for (k, v) in &self.metadata {
            if v.contains('\n') {
                return Err(LdamError::Config(format!("metadata {k:?} must be a single line")));
            }
            header.insert(format!("{META_PREFIX}{k}"), v.clone());
        }
        let header = format_key_values(&header);
        put_u32(&mut out, header.len() as u32);
        out.extend_from_slice(header.as_bytes());

        let tensors = self.params.tensors();
        put_u32(&mut out, tensors.len() as u32);
        for (name, t) in param_names().iter().zip(&tensors) {
            put_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.ndim() as u32);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            put_f64s(&mut out, t.data());
        }

        match &self.optimizer {
            None => out.push(0),
            Some(state) => {
                if state.m.len() != tensors.len() || state.v.len() != tensors.len() {
                    return Err(LdamError::Optimizer("optimizer state does not mirror the parameters".into()));
                }
                out.push(1);
                out.extend_from_slice(&state.step.to_le_bytes());
                let c = state.config;
                put_f64s(&mut out, &[c.lr, c.beta1, c.beta2, c.eps]);
                for (i, t) in tensors.iter().enumerate() {
                    if state.m[i].len() != t.len() || state.v[i].len() != t.len() {
                        return Err(LdamError::Optimizer(format!("moment buffer {i} has the wrong size")));
                    }
                    put_f64s(&mut out, &state.m[i]);
                    put_f64s(&mut out, &state.v[i]);
                }
            }
        }
        out.extend_from_slice(&(self.epochs_completed as u64).to_le_bytes());
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..8] != MAGIC {
            return Err(LdamError::CorruptCheckpoint("bad magic or truncated header".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(LdamError::CorruptCheckpoint("checksum mismatch".into()));
        }
        if version != VERSION {
            return Err(LdamError::CheckpointVersion { found: version, expected: VERSION });
        }
        let mut r = Reader { buf: body, pos: 12 };

        let header_len = r.u32()? as usize;
        let header = std::str::from_utf8(r.take(header_len)?)
            .map_err(|_| LdamError::CorruptCheckpoint("header is not UTF-8".into()))?;
        let mut config_map = BTreeMap::new();
        let mut metadata = BTreeMap::new();
        for (k, v) in parse_key_values(header).map_err(|e| LdamError::CorruptCheckpoint(e.to_string()))? {
            match k.strip_prefix(META_PREFIX) {
                Some(m) => metadata.insert(m.to_string(), v),
                None => config_map.insert(k, v),
            };
        }
        let config = ModelConfig::from_map(&config_map)?;

        let n = r.u32()? as usize;
        let names = param_names();
        if n != names.len() {
            return Err(LdamError::CorruptCheckpoint(format!("{n} tensors, expected {}", names.len())));
        }
        let mut tensors = Vec::with_capacity(n);
        for expected in &names {
            let name_len = r.u32()? as usize;
            let name = r.take(name_len)?;
            if name != expected.as_bytes() {
                return Err(LdamError::CorruptCheckpoint(format!("expected tensor {expected}")));
            }
            let ndim = r.u32()? as usize;
            if ndim == 0 || ndim > 3 {
                return Err(LdamError::CorruptCheckpoint(format!("{expected}: rank {ndim}")));
            }
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).filter(|&l| l <= r.remaining() / 8);
            let len = len.ok_or_else(|| LdamError::CorruptCheckpoint(format!("{expected}: shape {shape:?}")))?;
            let data = r.f64s(len)?;
            tensors.push(Tensor::new(&shape, data).map_err(|e| LdamError::CorruptCheckpoint(e.to_string()))?);
        }
        let sizes: Vec<usize> = tensors.iter().map(|t| t.len()).collect();
        let params = ModelParams::from_tensors(&config, tensors)?;

        let optimizer = match r.take(1)?[0] {
            0 => None,
            1 => {
                let step = r.u64()?;
                let c = r.f64s(4)?;
                let config = AdamConfig { lr: c[0], beta1: c[1], beta2: c[2], eps: c[3] };
                let mut state = AdamState::new(config, &sizes);
                state.step = step;
                for (i, &len) in sizes.iter().enumerate() {
                    state.m[i] = r.f64s(len)?;
                    state.v[i] = r.f64s(len)?;
                }
                Some(state)
            }
            b => return Err(LdamError::CorruptCheckpoint(format!("optimizer flag {b}"))),
        };
        let epochs_completed = r.u64()? as usize;
        if r.remaining() != 0 {
            return Err(LdamError::CorruptCheckpoint("trailing bytes".into()));
        }
        Ok(Self { config, params, metadata, optimizer, epochs_completed })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| LdamError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| LdamError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(LdamError::CorruptCheckpoint("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes =
            self.take(n.checked_mul(8).ok_or_else(|| LdamError::CorruptCheckpoint("length overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}
