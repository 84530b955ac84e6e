//! "FDW1" binary encoding of a [`ParamSet`].
//!
//! ```text
//! "FDW1"                      4 bytes magic
//! u32  tensor count
//! per tensor:
//!   u16  name length, then UTF-8 name bytes
//!   u8   rank
//!   u32  dim, repeated rank times
//!   f32  value, repeated product(dims) times
//! u32  CRC-32 (IEEE) over every byte after the magic and before the CRC
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::{ParamSet, ParamsError, Result, Tensor};

pub const FDW_MAGIC: &[u8; 4] = b"FDW1";

pub fn serialize(p: &ParamSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + p.num_values() * 4 + p.tensors().len() * 32);
    out.extend_from_slice(FDW_MAGIC);
    out.extend_from_slice(&(p.tensors().len() as u32).to_le_bytes());
    for t in p.tensors() {
        out.extend_from_slice(&(t.name().len() as u16).to_le_bytes());
        out.extend_from_slice(t.name().as_bytes());
        out.push(t.dims().len() as u8);
        for &d in t.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out[4..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn malformed(msg: impl Into<String>) -> ParamsError {
    ParamsError::MalformedPayload(msg.into())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| malformed(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
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
}

pub fn deserialize(bytes: &[u8]) -> Result<ParamSet> {
    if bytes.len() < 12 {
        return Err(malformed(format!(
            "{} bytes is shorter than the minimum frame",
            bytes.len()
        )));
    }
    if &bytes[..4] != FDW_MAGIC {
        return Err(malformed("bad magic"));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let actual = crc32fast::hash(&body[4..]);
    if stored != actual {
        return Err(malformed(format!(
            "checksum mismatch: stored {stored:#010x}, computed {actual:#010x}"
        )));
    }

    let mut cur = Cursor { buf: body, pos: 4 };
    let count = cur.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let name_len = cur.u16("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| malformed(format!("tensor {i}: name is not UTF-8")))?
            .to_owned();
        let rank = cur.u8("rank")? as usize;
        if !(1..=4).contains(&rank) {
            return Err(malformed(format!("tensor `{name}`: rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u32("dim")? as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| malformed(format!("tensor `{name}`: dims overflow")))?;
        let raw = cur.take(
            n.checked_mul(4)
                .ok_or_else(|| malformed(format!("tensor `{name}`: dims overflow")))?,
            "values",
        )?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::new(name, dims, values).map_err(|e| malformed(e.to_string()))?);
    }
    if cur.pos != body.len() {
        return Err(malformed(format!(
            "{} trailing bytes after last tensor",
            body.len() - cur.pos
        )));
    }
    ParamSet::new(tensors).map_err(|e| malformed(e.to_string()))
}

/// Writes a `.fdw` checkpoint.
pub fn write_fdw(path: impl AsRef<Path>, p: &ParamSet) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, serialize(p)).map_err(|e| ParamsError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn read_fdw(path: impl AsRef<Path>) -> Result<ParamSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| ParamsError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    deserialize(&bytes)
}
