//! Versioned binary container for parameter values.
//!
//! Layout (little endian):
//!
//! ```text
//! magic   8 bytes  "DHIOTWTS"
//! version u32
//! count   u32
//! repeated count times:
//!   name_len u32, name (utf-8)
//!   trainable u8
//!   rank u32, extents u64 × rank
//!   values f64 × product(extents), row-major
//! ```

use std::io::{Read, Write};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"DHIOTWTS";
pub const SNAPSHOT_VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> Error {
    Error::Snapshot(e.to_string())
}

pub fn write_snapshot<W: Write>(store: &ParamStore, mut w: W) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(SNAPSHOT_MAGIC);
    buf.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.push(p.trainable as u8);
        let shape = p.value.shape();
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io_err)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Snapshot(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<ParamStore> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(io_err)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(8)? != SNAPSHOT_MAGIC {
        return Err(Error::Snapshot("bad magic header".into()));
    }
    let version = c.u32()?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::Snapshot(format!("unsupported version {version}")));
    }
    let count = c.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let n = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(n)?)
            .map_err(|e| Error::Snapshot(e.to_string()))?
            .to_owned();
        let trainable = c.take(1)?[0] != 0;
        let rank = c.u32()? as usize;
        let shape = (0..rank)
            .map(|_| c.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = c.take(len.checked_mul(8).ok_or_else(|| Error::Snapshot("size overflow".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Snapshot(format!("{name}: {e}")))?;
        if store.id(&name).is_some() {
            return Err(Error::Snapshot(format!("duplicate entry `{name}`")));
        }
        if trainable {
            store.add(&name, t);
        } else {
            store.add_buffer(&name, t);
        }
    }
    if c.pos != buf.len() {
        return Err(Error::Snapshot("trailing bytes".into()));
    }
    Ok(store)
}
