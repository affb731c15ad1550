//! Binary checkpoint: `b"BPFC"`, `u16` version, `u32` descriptor length and
//! UTF-8 JSON descriptor, `u32` tensor count, then per tensor a `u16` name
//! length, the name and a tensor block (see `datasets::write_tensor`).
//! A trailing `u8` flags an optional optimizer section with the same layout
//! preceded by a `u64` step counter. All integers are little-endian.

use std::path::Path;

use crate::datasets::{read_tensor, write_tensor};
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

use super::StateDict;

const MAGIC: &[u8; 4] = b"BPFC";
const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<S> {
    pub descriptor: String,
    pub tensors: Vec<(String, Tensor<S>)>,
    pub optimizer: Option<(u64, Vec<(String, Tensor<S>)>)>,
}

fn put_named<S: Scalar>(buf: &mut Vec<u8>, items: &[(String, Tensor<S>)]) -> Result<()> {
    buf.extend((items.len() as u32).to_le_bytes());
    for (name, t) in items {
        buf.extend((name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        write_tensor(buf, t)?;
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let (h, t) = self.bytes.split_at(n);
        self.bytes = t;
        Ok(h)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format(self.path, "invalid UTF-8"))
    }

    fn named<S: Scalar>(&mut self) -> Result<Vec<(String, Tensor<S>)>> {
        let n = self.u32()? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let len = self.u16()? as usize;
            let name = self.string(len)?;
            let t = read_tensor(&mut self.bytes)?;
            out.push((name, t));
        }
        Ok(out)
    }
}

impl<S: Scalar> Checkpoint<S> {
    pub fn capture(descriptor: impl Into<String>, model: &impl StateDict<S>) -> Self {
        Checkpoint {
            descriptor: descriptor.into(),
            tensors: model.named_state().into_iter().map(|(n, t)| (n, t.clone())).collect(),
            optimizer: None,
        }
    }

    /// Copies tensors into `model`; names and shapes must match exactly.
    pub fn restore_into(&self, model: &mut impl StateDict<S>) -> Result<()> {
        let mut slots = model.named_state_mut();
        if slots.len() != self.tensors.len() {
            return Err(Error::InvalidArgument(format!(
                "checkpoint has {} tensors, model has {}",
                self.tensors.len(),
                slots.len()
            )));
        }
        for ((name, dst), (sname, src)) in slots.iter_mut().zip(&self.tensors) {
            if name != sname {
                return Err(Error::InvalidArgument(format!("tensor name {sname} does not match {name}")));
            }
            src.expect_shape("Checkpoint::restore_into", dst.shape())?;
            **dst = src.clone();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend(VERSION.to_le_bytes());
        buf.extend((self.descriptor.len() as u32).to_le_bytes());
        buf.extend_from_slice(self.descriptor.as_bytes());
        put_named(&mut buf, &self.tensors)?;
        match &self.optimizer {
            None => buf.push(0),
            Some((step, items)) => {
                buf.push(1);
                buf.extend(step.to_le_bytes());
                put_named(&mut buf, items)?;
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, path };
        if r.take(4)? != MAGIC {
            return Err(Error::format(path, "bad checkpoint magic"));
        }
        let ver = r.u16()?;
        if ver != VERSION {
            return Err(Error::format(path, format!("unsupported checkpoint version {ver}")));
        }
        let dlen = r.u32()? as usize;
        let descriptor = r.string(dlen)?;
        let tensors = r.named()?;
        let optimizer = match r.take(1)?[0] {
            0 => None,
            _ => {
                let step = r.u64()?;
                Some((step, r.named()?))
            }
        };
        Ok(Checkpoint {
            descriptor,
            tensors,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
