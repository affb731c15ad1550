//! Little-endian binary containers.
//!
//! Tensor block: `b"BPFT"`, `u16` version, `u8` dtype (1 = f32, 2 = f64),
//! `u8` rank, `rank × u64` dims, then the payload.
//!
//! Dataset file: `b"BPFD"`, `u16` version, `u16` name length + UTF-8 name,
//! `u8` normalised flag, an image tensor block, `u64` label count and
//! `u32` labels.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

use super::{Dataset, DatasetKind};

const TENSOR_MAGIC: &[u8; 4] = b"BPFT";
const DATASET_MAGIC: &[u8; 4] = b"BPFD";
const VERSION: u16 = 1;

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stream>", e)
}

pub fn write_tensor<S: Scalar, W: Write>(w: &mut W, t: &Tensor<S>) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + t.len() * std::mem::size_of::<S>());
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.extend(VERSION.to_le_bytes());
    buf.push(S::DTYPE);
    buf.push(t.rank() as u8);
    for &d in t.shape() {
        buf.extend((d as u64).to_le_bytes());
    }
    for &v in t.data() {
        buf.extend(v.to_le_bytes_vec());
    }
    w.write_all(&buf).map_err(io_err)
}

fn read_exact<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(b)
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    Ok(u16::from_le_bytes(read_exact(r, 2)?.try_into().unwrap()))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact(r, 8)?.try_into().unwrap()))
}

pub fn read_tensor<S: Scalar, R: Read>(r: &mut R) -> Result<Tensor<S>> {
    let bad = |m: String| Error::format("<tensor block>", m);
    if read_exact(r, 4)? != TENSOR_MAGIC {
        return Err(bad("bad tensor magic".into()));
    }
    let ver = read_u16(r)?;
    if ver != VERSION {
        return Err(bad(format!("unsupported version {ver}")));
    }
    let hdr = read_exact(r, 2)?;
    if hdr[0] != S::DTYPE {
        return Err(bad(format!("dtype tag {} does not match {}", hdr[0], S::NAME)));
    }
    let rank = hdr[1] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u64(r)? as usize);
    }
    let n: usize = shape.iter().product();
    let width = std::mem::size_of::<S>();
    let raw = read_exact(r, n * width)?;
    let data = raw.chunks_exact(width).map(S::from_le_slice).collect();
    Tensor::from_vec(&shape, data)
}

pub fn write_dataset_cache<S: Scalar>(path: &Path, ds: &Dataset<S>) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend(VERSION.to_le_bytes());
    let name = ds.meta.kind.name().as_bytes();
    buf.extend((name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name);
    buf.push(ds.normalized as u8);
    write_tensor(&mut buf, &ds.images)?;
    buf.extend((ds.labels.len() as u64).to_le_bytes());
    for &l in &ds.labels {
        buf.extend((l as u32).to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_dataset_cache<S: Scalar>(path: &Path) -> Result<Dataset<S>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = bytes.as_slice();
    if read_exact(&mut r, 4)? != DATASET_MAGIC {
        return Err(Error::format(path, "bad dataset cache magic"));
    }
    let ver = read_u16(&mut r)?;
    if ver != VERSION {
        return Err(Error::format(path, format!("unsupported version {ver}")));
    }
    let nlen = read_u16(&mut r)? as usize;
    let name = String::from_utf8(read_exact(&mut r, nlen)?).map_err(|_| Error::format(path, "bad name"))?;
    let kind: DatasetKind = name.parse()?;
    let normalized = read_exact(&mut r, 1)?[0] != 0;
    let images = read_tensor(&mut r)?;
    let n = read_u64(&mut r)? as usize;
    let raw = read_exact(&mut r, 4 * n)?;
    let labels = raw
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
        .collect();
    let mut ds = Dataset::new(images, labels, kind.meta())?;
    ds.normalized = normalized;
    Ok(ds)
}
