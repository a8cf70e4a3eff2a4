//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "GKLB" | version u32 | header_len u64 | header JSON
//! | n_tensors u32 | per tensor: name_len u32, name, dtype u8 (0 = f32),
//!   rank u32, dims u64 × rank, payload f32 × prod(dims)
//! | crc32 u32 over every preceding byte
//! ```
//!
//! Tensors are the weights in canonical order, then `m.<name>` and
//! `v.<name>` for the AdamW moments.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelWeights;
use crate::numeric::{RngState, Tensor};
use crate::optim::OptimState;
use crate::train::RunConfig;

pub const MAGIC: [u8; 4] = *b"GKLB";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Everything besides tensors. Floats that must survive bit-exactly are
/// stored as their IEEE bit patterns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub run: RunConfig,
    pub step: u64,
    pub tokens_seen: u64,
    pub data_rng: RngState,
    pub dropout_rng: RngState,
    /// Sum of training losses since the last metrics record, as f64 bits.
    pub loss_sum_bits: u64,
    pub loss_count: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub weights: ModelWeights<f32>,
    pub optim: OptimState<f32>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let mut tensors: Vec<(String, &Tensor<f32>)> = self.weights.named();
        tensors.extend(self.optim.m.named().into_iter().map(|(n, t)| (format!("m.{n}"), t)));
        tensors.extend(self.optim.v.named().into_iter().map(|(n, t)| (format!("v.{n}"), t)));
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &dim in t.shape() {
                out.extend_from_slice(&(dim as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(corrupt(0, "file is shorter than the CRC trailer"));
        }
        let body_len = bytes.len() - 4;
        let mut r = Reader { bytes: &bytes[..body_len], pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(corrupt(0, "bad magic, not a checkpoint file"));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(corrupt(
                4,
                &format!("format version {version}, this build reads {FORMAT_VERSION}"),
            ));
        }
        let stored = u32::from_le_bytes(bytes[body_len..].try_into().expect("4 bytes"));
        if crc32fast::hash(&bytes[..body_len]) != stored {
            return Err(corrupt(body_len, "CRC32 mismatch, file is corrupt"));
        }
        let header_len = r.u64("header length")? as usize;
        let header_at = r.pos;
        let header: CheckpointHeader = serde_json::from_slice(r.take(header_len, "header")?)
            .map_err(|e| corrupt(header_at, &format!("header JSON: {e}")))?;
        header.run.model.validate()?;
        let mut weights = ModelWeights::zeros(&header.run.model);
        let mut m = ModelWeights::zeros(&header.run.model);
        let mut v = ModelWeights::zeros(&header.run.model);
        let n_tensors_at = r.pos;
        let n_tensors = r.u32("tensor count")? as usize;
        let mut slots: Vec<(String, &mut Tensor<f32>)> = weights.named_mut();
        slots.extend(m.named_mut().into_iter().map(|(n, t)| (format!("m.{n}"), t)));
        slots.extend(v.named_mut().into_iter().map(|(n, t)| (format!("v.{n}"), t)));
        if n_tensors != slots.len() {
            return Err(corrupt(
                n_tensors_at,
                &format!("{n_tensors} tensors, the embedded config needs {}", slots.len()),
            ));
        }
        for (want, slot) in slots {
            let at = r.pos;
            let name_len = r.u32("tensor name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| corrupt(at, "tensor name is not UTF-8"))?;
            if name != want {
                return Err(corrupt(at, &format!("expected tensor {want}, found {name}")));
            }
            let dtype_at = r.pos;
            if r.take(1, "dtype")?[0] != DTYPE_F32 {
                return Err(corrupt(dtype_at, "unsupported dtype"));
            }
            let rank = r.u32("rank")? as usize;
            let dims_at = r.pos;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u64("dimension")? as usize);
            }
            if dims != slot.shape() {
                return Err(corrupt(
                    dims_at,
                    &format!("{name} has shape {dims:?}, expected {:?}", slot.shape()),
                ));
            }
            let payload = r.take(4 * slot.len(), "tensor payload")?;
            for (x, chunk) in slot.data_mut().iter_mut().zip(payload.chunks_exact(4)) {
                *x = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            }
        }
        if r.pos != body_len {
            return Err(corrupt(r.pos, "trailing bytes before the CRC"));
        }
        let step = header.step;
        Ok(Self {
            header,
            weights,
            optim: OptimState { m, v, step },
        })
    }
}

fn corrupt(offset: usize, reason: &str) -> Error {
    Error::Checkpoint {
        offset: offset as u64,
        reason: reason.to_string(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(corrupt(self.pos, &format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    // Write to a sibling and rename so a crash never leaves a torn file.
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
