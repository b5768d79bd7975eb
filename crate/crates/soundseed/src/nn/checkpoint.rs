//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!   magic "SSEED1" | version u32 | config-hash (u32 len + utf8)
//!   | entry count u32 | entries
//! entry: name (u32 len + utf8) | ndim u32 | dims u32... | f32 values
//!
//! The parser is hardened against untrusted input: every length is bounds
//! checked against the remaining bytes before any allocation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use super::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"SSEED1";
pub const VERSION: u32 = 1;

const MAX_NAME_LEN: usize = 4096;
const MAX_DIMS: usize = 8;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic: not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("truncated checkpoint: {0}")]
    Truncated(&'static str),
    #[error("invalid checkpoint field: {0}")]
    Invalid(String),
    #[error("parameter {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("parameter {0} missing from checkpoint")]
    Missing(String),
    #[error("config hash mismatch: checkpoint has {found}, current config is {expected}")]
    ConfigDrift { found: String, expected: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// In-memory checkpoint: named tensors plus the config hash stamped at save
/// time.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config_hash: String,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(config_hash: &str) -> Self {
        Self {
            config_hash: config_hash.to_string(),
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) {
        self.tensors.insert(name.to_string(), tensor);
    }

    /// Fetches a tensor, enforcing the expected shape.
    pub fn get(&self, name: &str, expected: &[usize]) -> Result<&Tensor, CheckpointError> {
        let t = self
            .tensors
            .get(name)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))?;
        if t.shape() != expected {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                expected: expected.to_vec(),
                found: t.shape().to_vec(),
            });
        }
        Ok(t)
    }

    /// Rejects a checkpoint whose config hash differs, unless drift is
    /// explicitly allowed.
    pub fn check_config_hash(&self, expected: &str, allow_drift: bool) -> Result<(), CheckpointError> {
        if !allow_drift && self.config_hash != expected {
            return Err(CheckpointError::ConfigDrift {
                found: self.config_hash.clone(),
                expected: expected.to_string(),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config_hash.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_hash.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(6, "magic")?;
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = cur.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::BadVersion(version));
        }
        let hash_len = cur.u32("config hash length")? as usize;
        if hash_len > MAX_NAME_LEN {
            return Err(CheckpointError::Invalid(format!(
                "config hash length {hash_len} too large"
            )));
        }
        let hash_bytes = cur.take(hash_len, "config hash")?;
        let config_hash = String::from_utf8(hash_bytes.to_vec())
            .map_err(|_| CheckpointError::Invalid("config hash is not utf-8".into()))?;
        let count = cur.u32("entry count")? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = cur.u32("name length")? as usize;
            if name_len == 0 || name_len > MAX_NAME_LEN {
                return Err(CheckpointError::Invalid(format!(
                    "name length {name_len} out of range"
                )));
            }
            let name_bytes = cur.take(name_len, "name")?;
            let name = String::from_utf8(name_bytes.to_vec())
                .map_err(|_| CheckpointError::Invalid("name is not utf-8".into()))?;
            let ndim = cur.u32("ndim")? as usize;
            if ndim > MAX_DIMS {
                return Err(CheckpointError::Invalid(format!("ndim {ndim} too large")));
            }
            let mut shape = Vec::with_capacity(ndim);
            let mut numel: usize = 1;
            for _ in 0..ndim {
                let d = cur.u32("dim")? as usize;
                numel = numel
                    .checked_mul(d)
                    .ok_or_else(|| CheckpointError::Invalid("shape overflow".into()))?;
                shape.push(d);
            }
            let byte_len = numel
                .checked_mul(4)
                .ok_or_else(|| CheckpointError::Invalid("data size overflow".into()))?;
            let raw = cur.take(byte_len, "tensor data")?;
            let mut data = Vec::with_capacity(numel);
            for chunk in raw.chunks_exact(4) {
                data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
            }
            let tensor = Tensor::from_vec(&shape, data)
                .map_err(|e| CheckpointError::Invalid(e.to_string()))?;
            if tensors.insert(name.clone(), tensor).is_some() {
                return Err(CheckpointError::Invalid(format!("duplicate entry {name}")));
            }
        }
        if cur.pos != bytes.len() {
            return Err(CheckpointError::Invalid(format!(
                "{} trailing bytes after last entry",
                bytes.len() - cur.pos
            )));
        }
        Ok(Self {
            config_hash,
            tensors,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated(what));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
