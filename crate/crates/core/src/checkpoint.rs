//! Versioned binary container for named tensors.
//!
//! Layout (all integers little-endian): magic `CLNS`, `u32` version,
//! `u32` tensor count, then per tensor a `u32` name length, the UTF-8 name,
//! a `u32` rank, `u64` dims, and the row-major `f64` payload.

use crate::autodiff::Tensor;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"CLNS";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes; not a tensor checkpoint")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("tensor name is not valid UTF-8")]
    BadName,
    #[error("tensor {name:?} dimension product overflows")]
    Overflow { name: String },
    #[error("trailing bytes after the last tensor")]
    TrailingBytes,
    #[error("checkpoint does not contain tensor {0:?}")]
    MissingTensor(String),
}

pub fn write_tensors(
    mut w: impl Write,
    entries: &[(String, Tensor)],
) -> Result<(), CheckpointError> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, tensor) in entries {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(tensor.rank() as u32).to_le_bytes())?;
        for &dim in tensor.shape() {
            w.write_all(&(dim as u64).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_tensors(mut r: impl Read) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let count = read_u32(&mut r)?;
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes).map_err(|_| CheckpointError::BadName)?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)?;
            let dim = u64::from_le_bytes(buf) as usize;
            numel = numel
                .checked_mul(dim)
                .ok_or_else(|| CheckpointError::Overflow { name: name.clone() })?;
            shape.push(dim);
        }
        let mut data = vec![0.0f64; numel];
        let mut buf = [0u8; 8];
        for v in &mut data {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        let tensor = Tensor::new(shape, data).expect("length derived from shape");
        entries.push((name, tensor));
    }
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(entries),
        _ => Err(CheckpointError::TrailingBytes),
    }
}

fn read_u32(mut r: impl Read) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn save_tensors(path: &Path, entries: &[(String, Tensor)]) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensors(&mut w, entries)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    read_tensors(BufReader::new(File::open(path)?))
}

/// Pulls one named tensor out of a loaded entry list.
pub fn take_tensor(
    entries: &mut Vec<(String, Tensor)>,
    name: &str,
) -> Result<Tensor, CheckpointError> {
    match entries.iter().position(|(n, _)| n == name) {
        Some(i) => Ok(entries.swap_remove(i).1),
        None => Err(CheckpointError::MissingTensor(name.to_string())),
    }
}
