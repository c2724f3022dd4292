//! Binary checkpoint container.
//!
//! Layout, little-endian: magic `CRCG`, u32 version, u64 step, u32 tensor
//! count, then per tensor a u16 name length, the UTF-8 name, u8 rank, u32
//! dims and f64 data. Two length-prefixed (u32) blobs follow: the RNG state
//! and the `key=value` training configuration.

use std::path::Path;

use crate::autodiff::Tensor;

use super::{Result, TrainError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CRCG";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub tensors: Vec<(String, Tensor)>,
    pub rng: Vec<u8>,
    pub config: String,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&ck.step.to_le_bytes());
    out.extend_from_slice(&(ck.tensors.len() as u32).to_le_bytes());
    for (name, t) in &ck.tensors {
        let len = u16::try_from(name.len()).map_err(|_| TrainError::Config(format!("tensor name too long: {name}")))?;
        let rank = u8::try_from(t.shape().len()).map_err(|_| TrainError::Config(format!("rank too high: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| TrainError::Config(format!("dimension too large: {name}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for blob in [&ck.rng[..], ck.config.as_bytes()] {
        out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
        out.extend_from_slice(blob);
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(TrainError::Format {
                offset: self.pos,
                message: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(TrainError::Format { offset: 0, message: "bad magic".into() });
    }
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(TrainError::Format { offset: 4, message: format!("unsupported version {version}") });
    }
    let step = c.u64("step")?;
    let count = c.u32("tensor count")?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let at = c.pos;
        let len = c.u16("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| TrainError::Format { offset: at + 2, message: "tensor name is not UTF-8".into() })?
            .to_string();
        let rank = c.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("dimension")? as usize);
        }
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| TrainError::Format {
            offset: at,
            message: format!("tensor {name} is too large"),
        })?;
        let raw = c.take(n.checked_mul(8).unwrap_or(usize::MAX), "tensor data")?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        tensors.push((name, Tensor::new(&shape, data).expect("length matches shape")));
    }
    let n = c.u32("rng length")? as usize;
    let rng = c.take(n, "rng state")?.to_vec();
    let at = c.pos;
    let n = c.u32("config length")? as usize;
    let config = std::str::from_utf8(c.take(n, "config")?)
        .map_err(|_| TrainError::Format { offset: at + 4, message: "config is not UTF-8".into() })?
        .to_string();
    if c.pos != bytes.len() {
        return Err(TrainError::Format { offset: c.pos, message: "trailing bytes".into() });
    }
    Ok(Checkpoint { step, tensors, rng, config })
}

pub fn write_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ck)?)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}
