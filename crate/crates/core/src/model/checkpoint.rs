//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header (config, optional metadata, tensor names and shapes), then every
//! tensor's values as little-endian `f64` in header order. Values round-trip
//! bit for bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"HGATECKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab_fingerprint: Option<String>,
    temperature: Option<f64>,
    tensors: Vec<TensorHeader>,
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

/// Parameters plus the metadata needed to use them safely later.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    /// Fingerprint of the vocabulary the model was trained with.
    pub vocab_fingerprint: Option<String>,
    /// Calibration temperature, when the checkpoint is a teacher.
    pub temperature: Option<f64>,
}

impl Checkpoint {
    pub fn new(params: ModelParams) -> Self {
        Self {
            params,
            vocab_fingerprint: None,
            temperature: None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.params.config.clone(),
            vocab_fingerprint: self.vocab_fingerprint.clone(),
            temperature: self.temperature,
            tensors: self
                .params
                .names()
                .iter()
                .zip(self.params.tensors())
                .map(|(name, t)| TensorHeader {
                    name: name.clone(),
                    shape: t.value.shape().to_vec(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(24 + header.len() + 8 * self.params.num_parameters());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.params.tensors() {
            for v in t.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut reader = Reader { rest: bytes };
        if reader.take(8)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(reader.take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let header_len = u64::from_le_bytes(reader.take(8)?.try_into().expect("8 bytes")) as usize;
        let header: Header = serde_json::from_slice(reader.take(header_len)?)
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let mut named = Vec::with_capacity(header.tensors.len());
        for th in header.tensors {
            let len: usize = th.shape.iter().product();
            let data = reader
                .take(len * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            named.push((th.name, Tensor::new(th.shape, data)?));
        }
        if !reader.rest.is_empty() {
            return Err(Error::Format(format!(
                "{} trailing bytes after last tensor",
                reader.rest.len()
            )));
        }
        let params = ModelParams::from_tensors(header.config, named)?;
        Ok(Self {
            params,
            vocab_fingerprint: header.vocab_fingerprint,
            temperature: header.temperature,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    rest: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.rest.len() < n {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let (head, rest) = self.rest.split_at(n);
        self.rest = rest;
        Ok(head)
    }
}
