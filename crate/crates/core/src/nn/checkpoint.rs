//! Flat binary archive of named tensors.
//!
//! Layout, all integers little-endian:
//! `b"HITP"`, `u32` version, `u8` dtype size, `u32` tensor count, then per
//! tensor `u32` name length, UTF-8 name, `u32` rank, `u64` extents, raw
//! values.

use std::io::{Read, Write};
use std::path::Path;

use super::params::ParamStore;
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HITP";
const VERSION: u32 = 1;

pub fn encode_params<T: Real>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + store.num_values() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE.size() as u8);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &t.data {
            v.write_le(&mut out);
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::CorruptCheckpoint("unexpected end of archive".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Overwrites every tensor of `store` with the archived values. Names,
/// order, shapes and precision must match exactly.
pub fn decode_params_into<T: Real>(bytes: &[u8], store: &mut ParamStore<T>) -> Result<()> {
    let corrupt = |m: String| Error::CorruptCheckpoint(m);
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let width = c.take(1)?[0] as usize;
    if width != T::DTYPE.size() {
        return Err(corrupt(format!("stored {width}-byte values, expected {}", T::DTYPE.size())));
    }
    let count = c.u32()? as usize;
    if count != store.len() {
        return Err(corrupt(format!("{count} tensors stored, model has {}", store.len())));
    }
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name_len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?).map_err(|e| corrupt(e.to_string()))?;
        if name != store.name(id) {
            return Err(corrupt(format!("expected `{}`, found `{name}`", store.name(id))));
        }
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if shape != store.get(id).shape {
            return Err(corrupt(format!("`{name}` has shape {shape:?}, model expects {:?}", store.get(id).shape)));
        }
        let n: usize = shape.iter().product();
        let raw = c.take(n * width)?;
        let data = raw.chunks_exact(width).map(T::read_le).collect();
        *store.get_mut(id) = Tensor { shape, data };
    }
    if c.pos != bytes.len() {
        return Err(corrupt("trailing bytes".into()));
    }
    Ok(())
}

pub fn save_params<T: Real>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_params(store))?;
    Ok(())
}

pub fn load_params_into<T: Real>(path: &Path, store: &mut ParamStore<T>) -> Result<()> {
    let mut f = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    decode_params_into(&bytes, store)
}
