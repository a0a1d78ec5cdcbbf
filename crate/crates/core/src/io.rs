//! Little-endian binary helpers shared by the parameter and checkpoint
//! formats.

use std::fs;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Upper bound on any single length field read from disk.
const MAX_ELEMENTS: u64 = 1 << 32;

pub fn write_f64s(w: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_f64s(r: &mut impl Read, len: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; len * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn expect_magic(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

/// Tensor record: rank (u32), dims (u64 each), values.
pub fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    write_f64s(w, t.data())?;
    Ok(())
}

pub fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let rank = read_u32(r)?;
    if rank > 8 {
        return Err(Error::Format(format!("tensor rank {rank} out of range")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut total: u64 = 1;
    for _ in 0..rank {
        let d = read_u64(r)?;
        total = total.saturating_mul(d);
        shape.push(d as usize);
    }
    if total > MAX_ELEMENTS {
        return Err(Error::Format(format!("tensor with {total} elements out of range")));
    }
    let data = read_f64s(r, total as usize)?;
    Tensor::new(shape, data)
}

/// Length-prefixed JSON document.
pub fn write_json<T: Serialize>(w: &mut impl Write, value: &T) -> Result<()> {
    let bytes = serde_json::to_vec(value).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(&(bytes.len() as u64).to_le_bytes())?;
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(r: &mut impl Read) -> Result<T> {
    let len = read_u64(r)?;
    if len > MAX_ELEMENTS {
        return Err(Error::Format(format!("metadata block of {len} bytes out of range")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    serde_json::from_slice(&buf).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| file_error(path, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| file_error(path, e))
}

/// Opens `path` and runs `parse` on it, attaching the path to any failure.
pub fn read_file_with<T>(path: &Path, parse: impl FnOnce(&mut BufReader<fs::File>) -> Result<T>) -> Result<T> {
    let file = fs::File::open(path).map_err(|e| file_error(path, e))?;
    let mut reader = BufReader::new(file);
    let value = parse(&mut reader).map_err(|e| file_error(path, e))?;
    let mut rest = [0u8; 1];
    match reader.read(&mut rest) {
        Ok(0) => Ok(value),
        Ok(_) => Err(file_error(path, "trailing bytes after payload")),
        Err(e) => Err(file_error(path, e)),
    }
}

fn file_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::File {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}
