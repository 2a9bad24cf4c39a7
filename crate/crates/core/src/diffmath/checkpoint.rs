//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  b"DVCK"        4 bytes
//! version               u8 (= 1)
//! count                 u32
//! count × record:
//!   name_len u32, name (utf-8)
//!   rank u32, dims u64 × rank
//!   data f64 × product(dims)
//! ```

use std::io::{self, Read, Write};

use super::{NumArray, ParamStore};

pub const MAGIC: [u8; 4] = *b"DVCK";
pub const VERSION: u8 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u8),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint does not match model: {0}")]
    Mismatch(String),
}

pub fn write_checkpoint(store: &ParamStore, mut w: impl Write) -> Result<(), CheckpointError> {
    w.write_all(&MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, value) in store.names().iter().zip(store.values()) {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(value.rank() as u32).to_le_bytes())?;
        for &d in value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for x in value.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn checkpoint_bytes(store: &ParamStore) -> Vec<u8> {
    let mut buf = Vec::new();
    write_checkpoint(store, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint(mut r: impl Read) -> Result<ParamStore, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut version = [0u8; 1];
    r.read_exact(&mut version)?;
    if version[0] != VERSION {
        return Err(CheckpointError::Version(version[0]));
    }
    let count = read_u32(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        let value = NumArray::new(shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        store.add(name, value);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(CheckpointError::Malformed(format!("{} trailing bytes", rest.len())));
    }
    Ok(store)
}

/// Copies checkpoint values into `target`, requiring identical names and shapes.
pub fn load_into(target: &mut ParamStore, loaded: &ParamStore) -> Result<(), CheckpointError> {
    if target.names() != loaded.names() {
        return Err(CheckpointError::Mismatch("parameter names differ".into()));
    }
    for (dst, src) in target.values_mut().iter_mut().zip(loaded.values()) {
        if dst.shape() != src.shape() {
            return Err(CheckpointError::Mismatch(format!("shape {:?} vs {:?}", dst.shape(), src.shape())));
        }
        *dst = src.clone();
    }
    Ok(())
}
