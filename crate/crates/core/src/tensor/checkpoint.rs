//! Flat binary archive of named tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "ASCCKPT\0"
//! version  u32
//! count    u32
//! entries  count x { kind u8, path_len u32, path utf-8, rank u32,
//!                    dims rank x u64, values prod(dims) x f64 }
//! ```
//!
//! `kind` is 0 for trainable parameters and 1 for non-trainable buffers
//! such as batch-norm running statistics.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"ASCCKPT\0";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntryKind {
    Param,
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub kind: EntryKind,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: BTreeMap<String, CheckpointEntry>,
}

pub(crate) fn write_header(w: &mut impl Write, magic: &[u8; 8], version: u32) -> std::io::Result<()> {
    w.write_all(magic)?;
    w.write_all(&version.to_le_bytes())
}

pub(crate) fn read_header(r: &mut impl Read, magic: &[u8; 8], version: u32) -> Result<()> {
    let mut m = [0u8; 8];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    let v = read_u32(r)?;
    if v != version {
        return Err(Error::Checkpoint(format!("unsupported version {v}, expected {version}")));
    }
    Ok(())
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub(crate) fn write_f64s(w: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub(crate) fn read_string(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| Error::Checkpoint(format!("invalid utf-8 string: {e}")))
}

pub(crate) fn write_string(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

pub fn write_checkpoint(w: &mut impl Write, ckpt: &Checkpoint) -> Result<()> {
    write_header(w, MAGIC, CHECKPOINT_VERSION)?;
    w.write_all(&(ckpt.entries.len() as u32).to_le_bytes())?;
    for (path, e) in &ckpt.entries {
        w.write_all(&[match e.kind {
            EntryKind::Param => 0,
            EntryKind::Buffer => 1,
        }])?;
        write_string(w, path)?;
        w.write_all(&(e.shape.len() as u32).to_le_bytes())?;
        for d in &e.shape {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        write_f64s(w, &e.values)?;
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint> {
    read_header(r, MAGIC, CHECKPOINT_VERSION)?;
    let count = read_u32(r)?;
    let mut entries = BTreeMap::new();
    for _ in 0..count {
        let mut kind = [0u8; 1];
        r.read_exact(&mut kind)?;
        let kind = match kind[0] {
            0 => EntryKind::Param,
            1 => EntryKind::Buffer,
            k => return Err(Error::Checkpoint(format!("unknown entry kind {k}"))),
        };
        let path = read_string(r)?;
        let rank = read_u32(r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let values = read_f64s(r, shape.iter().product())?;
        entries.insert(path, CheckpointEntry { kind, shape, values });
    }
    Ok(Checkpoint { entries })
}
