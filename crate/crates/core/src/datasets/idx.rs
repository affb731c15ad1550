//! IDX container: big-endian `u32` magic and dimensions followed by raw bytes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

use super::{Dataset, DatasetKind};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_be_bytes(b.try_into().unwrap()))
}

/// Returns `(count, rows, cols, pixels)` from an images file.
pub fn parse_idx_images<'a>(bytes: &'a [u8], path: &Path) -> Result<(usize, usize, usize, &'a [u8])> {
    let magic = be_u32(bytes, 0).ok_or_else(|| Error::format(path, "truncated header"))?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(path, format!("bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4).ok_or_else(|| Error::format(path, "truncated header"))? as usize;
    let r = be_u32(bytes, 8).ok_or_else(|| Error::format(path, "truncated header"))? as usize;
    let c = be_u32(bytes, 12).ok_or_else(|| Error::format(path, "truncated header"))? as usize;
    let body = &bytes[16..];
    if body.len() < n * r * c {
        return Err(Error::format(path, format!("truncated: {} of {} pixel bytes", body.len(), n * r * c)));
    }
    Ok((n, r, c, &body[..n * r * c]))
}

pub fn parse_idx_labels<'a>(bytes: &'a [u8], path: &Path) -> Result<&'a [u8]> {
    let magic = be_u32(bytes, 0).ok_or_else(|| Error::format(path, "truncated header"))?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(path, format!("bad magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4).ok_or_else(|| Error::format(path, "truncated header"))? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::format(path, format!("truncated: {} of {n} labels", body.len())));
    }
    Ok(&body[..n])
}

/// Loads an IDX image/label pair as `N×1×28×28` in `[0, 1]`.
pub fn load_idx<S: Scalar>(images_path: &Path, labels_path: &Path, kind: DatasetKind) -> Result<Dataset<S>> {
    let ib = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let lb = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let (n, r, c, px) = parse_idx_images(&ib, images_path)?;
    let labels = parse_idx_labels(&lb, labels_path)?;
    if labels.len() != n {
        return Err(Error::format(
            labels_path,
            format!("count mismatch: {n} images but {} labels", labels.len()),
        ));
    }
    let meta = kind.meta();
    if r != meta.height || c != meta.width {
        return Err(Error::format(images_path, format!("expected {}×{} images, got {r}×{c}", meta.height, meta.width)));
    }
    let scale = S::from_f64c(1.0 / 255.0);
    let data: Vec<S> = px.iter().map(|&b| S::from_usize_c(b as usize) * scale).collect();
    let images = Tensor::from_vec(&[n, 1, r, c], data)?;
    Dataset::new(images, labels.iter().map(|&l| l as usize).collect(), meta)
}
