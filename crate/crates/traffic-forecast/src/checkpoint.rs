//! Versioned binary checkpoint container.
//!
//! Layout: magic + format version, model config as JSON with its SHA-256,
//! training-data hash, epoch/validation metadata, then named tensor
//! sections for parameters, buffers and optional optimizer state. The
//! whole file is sealed with a trailing SHA-256 so truncation or
//! corruption is detected on load. Round trips are bit-identical.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::Tensor;
use crate::train::{AdamConfig, AdamState};

const MAGIC: &[u8; 4] = b"TFCK";
const VERSION: u32 = 1;

/// Everything needed to resume or evaluate a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Provenance hash of the training data (hex, may be empty).
    pub data_hash: String,
    pub epoch: u64,
    pub val_loss: f64,
    pub params: ModelParams,
    pub buffers: ModelParams,
    pub adam: Option<AdamState>,
}

/// Canonical hex SHA-256 of a model config's JSON form.
pub fn config_hash(config: &ModelConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    hex(&Sha256::digest(json.as_bytes()))
}

/// Hex SHA-256 of arbitrary bytes (used for data provenance hashes).
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(digest: &[u8]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn config_hash(&self) -> String {
        config_hash(&self.config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        let config_json = serde_json::to_vec(&self.config)
            .map_err(|e| Error::Checkpoint(format!("config serialization failed: {e}")))?;
        write_bytes(&mut buf, &config_json);
        write_bytes(&mut buf, self.data_hash.as_bytes());
        buf.extend_from_slice(&self.epoch.to_le_bytes());
        buf.extend_from_slice(&self.val_loss.to_le_bytes());
        write_section(&mut buf, &self.params);
        write_section(&mut buf, &self.buffers);
        match &self.adam {
            None => buf.push(0),
            Some(state) => {
                buf.push(1);
                buf.extend_from_slice(&state.step.to_le_bytes());
                for v in [state.config.lr, state.config.beta1, state.config.beta2, state.config.eps] {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
                write_section(&mut buf, &state.m);
                write_section(&mut buf, &state.v);
            }
        }
        let seal = Sha256::digest(&buf);
        buf.extend_from_slice(&seal);
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let buf = std::fs::read(path)?;
        if buf.len() < 32 {
            return Err(Error::Checkpoint("file too short to hold a seal".into()));
        }
        let (body, seal) = buf.split_at(buf.len() - 32);
        if Sha256::digest(body).as_slice() != seal {
            return Err(Error::Checkpoint("seal mismatch: file truncated or corrupt".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic: not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {VERSION})"
            )));
        }
        let config_json = r.bytes()?;
        let config: ModelConfig = serde_json::from_slice(&config_json)
            .map_err(|e| Error::Checkpoint(format!("bad config JSON: {e}")))?;
        let data_hash = String::from_utf8(r.bytes()?)
            .map_err(|_| Error::Checkpoint("data hash is not UTF-8".into()))?;
        let epoch = r.u64()?;
        let val_loss = f64::from_bits(r.u64()?);
        let params = read_section(&mut r)?;
        let buffers = read_section(&mut r)?;
        let adam = match r.take(1)?[0] {
            0 => None,
            1 => {
                let step = r.u64()?;
                let lr = f64::from_bits(r.u64()?);
                let beta1 = f64::from_bits(r.u64()?);
                let beta2 = f64::from_bits(r.u64()?);
                let eps = f64::from_bits(r.u64()?);
                let m = read_section(&mut r)?;
                let v = read_section(&mut r)?;
                Some(AdamState { config: AdamConfig { lr, beta1, beta2, eps }, step, m, v })
            }
            other => {
                return Err(Error::Checkpoint(format!("bad optimizer flag {other}")));
            }
        };
        if r.pos != r.buf.len() {
            return Err(Error::Checkpoint("trailing bytes after checkpoint body".into()));
        }
        Ok(Checkpoint { config, data_hash, epoch, val_loss, params, buffers, adam })
    }
}

fn write_bytes(buf: &mut Vec<u8>, bytes: &[u8]) {
    buf.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
    buf.extend_from_slice(bytes);
}

fn write_section(buf: &mut Vec<u8>, params: &ModelParams) {
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for (name, tensor) in params.iter() {
        write_bytes(buf, name.as_bytes());
        buf.extend_from_slice(&(tensor.rank() as u64).to_le_bytes());
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("unexpected end of file".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        if n > self.buf.len() as u64 {
            return Err(Error::Checkpoint(format!("implausible length field {n}")));
        }
        Ok(n as usize)
    }

    fn bytes(&mut self) -> Result<Vec<u8>> {
        let n = self.len()?;
        Ok(self.take(n)?.to_vec())
    }
}

fn read_section(r: &mut Reader) -> Result<ModelParams> {
    let count = r.len()?;
    let mut entries = BTreeMap::new();
    for _ in 0..count {
        let name = String::from_utf8(r.bytes()?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = r.len()?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.len()?);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_bits(r.u64()?));
        }
        entries.insert(name, Tensor::new(shape, data)?);
    }
    Ok(ModelParams::from_map(entries))
}
