//! `SPA1` weight files.
//!
//! ```text
//! "SPA1"  version:u8  count:u32
//! count x { name_len:u32  name:[u8; name_len]  rank:u8  dims:[u32; rank]  values:[f32; prod(dims)] }
//! ```
//!
//! All integers and floats are little-endian. Records appear in parameter
//! order; names are the parameter names of the network.

use std::fs;
use std::path::Path;

use spanet_core::{Param, ParamStore, Real, Shape, Tensor};

use crate::error::{CliError, FormatError, Result};

pub const MAGIC: &[u8; 4] = b"SPA1";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn encode<T: Real>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + store.num_scalars() * 4);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for Param { name, dims, value, .. } in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(dims.len() as u8);
        for &d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in value.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Record>, FormatError> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(4).ok_or(FormatError::TruncatedHeader)?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic.to_vec()));
    }
    let version = c.take(1).ok_or(FormatError::TruncatedHeader)?[0];
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let count = c.u32().ok_or(FormatError::TruncatedHeader)? as usize;
    // no up-front allocation from the untrusted count
    let mut records = Vec::new();
    for index in 0..count {
        let truncated = FormatError::TruncatedRecord { index };
        let name_len = c.u32().ok_or(truncated.clone())? as usize;
        let name = c.take(name_len).ok_or(truncated.clone())?;
        let name = String::from_utf8(name.to_vec()).map_err(|_| FormatError::BadName { index })?;
        let rank = c.take(1).ok_or(truncated.clone())?[0];
        if !(1..=4).contains(&rank) {
            return Err(FormatError::BadRank { index, name, rank });
        }
        let mut dims = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            dims.push(c.u32().ok_or(truncated.clone())? as usize);
        }
        let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(truncated.clone())?;
        if numel.checked_mul(4).is_none_or(|b| b > c.remaining()) {
            return Err(truncated);
        }
        let raw = c.take(numel * 4).ok_or(truncated)?;
        let values = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
        records.push(Record { name, dims, values });
    }
    if c.remaining() != 0 {
        return Err(FormatError::TrailingBytes(c.remaining()));
    }
    Ok(records)
}

/// Copies decoded records into `store`. Every parameter must be present
/// exactly once with matching dims, and no extra records are allowed.
pub fn restore<T: Real>(store: &mut ParamStore<T>, records: Vec<Record>) -> Result<(), FormatError> {
    let mut slots: Vec<Option<Record>> = vec![None; store.len()];
    for r in records {
        let Some(id) = store.find(&r.name) else {
            return Err(FormatError::UnexpectedRecord { name: r.name });
        };
        if slots[id.0].is_some() {
            return Err(FormatError::DuplicateRecord { name: r.name });
        }
        slots[id.0] = Some(r);
    }
    for (param, slot) in store.iter_mut().zip(slots) {
        let r = slot.ok_or_else(|| FormatError::MissingRecord { name: param.name.clone() })?;
        if r.dims != param.dims {
            return Err(FormatError::ShapeMismatch { name: r.name, expected: param.dims.clone(), found: r.dims });
        }
        let shape: Shape = param.value.shape();
        let data = r.values.iter().map(|&v| T::from_f64(v as f64)).collect();
        param.value = Tensor::from_vec(shape, data).expect("dims checked against the parameter");
    }
    Ok(())
}

pub fn save<T: Real>(path: &Path, store: &ParamStore<T>) -> Result<()> {
    fs::write(path, encode(store)).map_err(|e| CliError::io(path, e))
}

pub fn load_into<T: Real>(path: &Path, store: &mut ParamStore<T>) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let records = decode(&bytes).map_err(|e| CliError::format(path, e))?;
    restore(store, records).map_err(|e| CliError::format(path, e))
}
