//! CIFAR binary records: label byte(s) followed by 3072 channel-planar pixels.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

use super::{Dataset, DatasetKind};

const PIXELS: usize = 3 * 32 * 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CifarVariant {
    Cifar10,
    /// Coarse byte, fine byte, pixels; the fine label is used.
    Cifar100,
}

impl CifarVariant {
    fn record_len(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1 + PIXELS,
            CifarVariant::Cifar100 => 2 + PIXELS,
        }
    }

    fn kind(self) -> DatasetKind {
        match self {
            CifarVariant::Cifar10 => DatasetKind::Cifar10,
            CifarVariant::Cifar100 => DatasetKind::Cifar100,
        }
    }
}

pub(crate) fn parse_cifar_records<S: Scalar>(
    bytes: &[u8],
    variant: CifarVariant,
    path: &Path,
    images: &mut Vec<S>,
    labels: &mut Vec<usize>,
) -> Result<()> {
    let rec = variant.record_len();
    if !bytes.len().is_multiple_of(rec) {
        return Err(Error::format(
            path,
            format!("record-size mismatch: {} bytes is not a multiple of {rec}", bytes.len()),
        ));
    }
    let off = rec - PIXELS;
    let scale = S::from_f64c(1.0 / 255.0);
    for r in bytes.chunks_exact(rec) {
        labels.push(r[off - 1] as usize);
        images.extend(r[off..].iter().map(|&b| S::from_usize_c(b as usize) * scale));
    }
    Ok(())
}

/// Concatenates the records of all `paths` into one `N×3×32×32` dataset.
pub fn load_cifar<S: Scalar>(paths: &[PathBuf], variant: CifarVariant) -> Result<Dataset<S>> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
        parse_cifar_records(&bytes, variant, p, &mut images, &mut labels)?;
    }
    let n = labels.len();
    let t = Tensor::from_vec(&[n, 3, 32, 32], images)?;
    Dataset::new(t, labels, variant.kind().meta())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_record_is_zero_image_label_zero() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        std::fs::write(&p, vec![0u8; 2 * (1 + PIXELS)]).unwrap();
        let ds: Dataset<f32> = load_cifar(&[p], CifarVariant::Cifar10).unwrap();
        assert_eq!(ds.images.shape(), &[2, 3, 32, 32]);
        assert_eq!(ds.labels, vec![0, 0]);
        assert_eq!(ds.images.max_abs(), 0.0);
    }

    #[test]
    fn cifar100_uses_fine_label_and_keeps_planes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("train.bin");
        let mut rec = vec![0u8; 2 + PIXELS];
        rec[0] = 4;
        rec[1] = 77;
        rec[2 + 1024] = 255; // first green pixel
        std::fs::write(&p, &rec).unwrap();
        let ds: Dataset<f64> = load_cifar(&[p], CifarVariant::Cifar100).unwrap();
        assert_eq!(ds.meta.num_classes, 100);
        assert_eq!(ds.labels, vec![77]);
        assert_eq!(ds.images.data()[1024], 1.0);
    }

    #[test]
    fn record_size_mismatch_errors() {
        let mut imgs: Vec<f32> = Vec::new();
        let mut labs = Vec::new();
        let err = parse_cifar_records(&vec![0u8; PIXELS], CifarVariant::Cifar10, Path::new("x"), &mut imgs, &mut labs)
            .unwrap_err();
        assert!(err.to_string().contains("record-size mismatch"));
    }
}
