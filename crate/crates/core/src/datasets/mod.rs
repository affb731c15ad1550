//! Dataset parsing, splitting, normalisation, augmentation and batching.

mod augment;
mod batch;
mod cache;
mod cifar;
mod idx;
mod split;
mod verify;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

pub use augment::{augment, flip_horizontal, pad_crop, AugmentPolicy};
pub use batch::{batches, Batch};
pub use cache::{read_dataset_cache, read_tensor, write_dataset_cache, write_tensor};
pub use cifar::{load_cifar, CifarVariant};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels};
pub use split::{split_train_val, SplitPolicy, SplitSpec};
pub use verify::{verify_dataset, FileCheck};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetKind {
    #[serde(rename = "mnist")]
    Mnist,
    #[serde(rename = "fashion-mnist", alias = "fmnist", alias = "f-mnist")]
    FashionMnist,
    #[serde(rename = "cifar10", alias = "cifar-10")]
    Cifar10,
    #[serde(rename = "cifar100", alias = "cifar-100")]
    Cifar100,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 4] = [
        DatasetKind::Mnist,
        DatasetKind::FashionMnist,
        DatasetKind::Cifar10,
        DatasetKind::Cifar100,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::FashionMnist => "fashion-mnist",
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Cifar100 => "cifar100",
        }
    }

    /// Sub-directory of the data root holding this dataset's files.
    pub fn dir_name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::FashionMnist => "fashion-mnist",
            DatasetKind::Cifar10 => "cifar-10-batches-bin",
            DatasetKind::Cifar100 => "cifar-100-binary",
        }
    }

    pub fn is_cifar(self) -> bool {
        matches!(self, DatasetKind::Cifar10 | DatasetKind::Cifar100)
    }

    pub fn meta(self) -> DatasetMeta {
        let (classes, channels, side, mean, std): (usize, usize, usize, &[f64], &[f64]) = match self {
            DatasetKind::Mnist => (10, 1, 28, &[0.1307], &[0.3081]),
            DatasetKind::FashionMnist => (10, 1, 28, &[0.2860], &[0.3530]),
            DatasetKind::Cifar10 => (10, 3, 32, &[0.4914, 0.4822, 0.4465], &[0.2023, 0.1994, 0.2010]),
            DatasetKind::Cifar100 => (100, 3, 32, &[0.5071, 0.4867, 0.4408], &[0.2675, 0.2565, 0.2761]),
        };
        DatasetMeta {
            kind: self,
            num_classes: classes,
            channels,
            height: side,
            width: side,
            mean: mean.to_vec(),
            std: std.to_vec(),
        }
    }

    /// Default validation split: fixed last 10k for MNIST, a seeded 10% otherwise.
    pub fn default_split(self, seed: u64) -> SplitSpec {
        match self {
            DatasetKind::Mnist => SplitSpec {
                policy: SplitPolicy::FixedCount(10_000),
                seed,
            },
            _ => SplitSpec {
                policy: SplitPolicy::Fraction(0.1),
                seed,
            },
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(DatasetKind::Mnist),
            "fashion-mnist" | "fmnist" | "f-mnist" | "fashion_mnist" => Ok(DatasetKind::FashionMnist),
            "cifar10" | "cifar-10" => Ok(DatasetKind::Cifar10),
            "cifar100" | "cifar-100" => Ok(DatasetKind::Cifar100),
            other => Err(Error::InvalidArgument(format!("unknown dataset `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub kind: DatasetKind,
    pub num_classes: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl DatasetMeta {
    pub fn input_dim(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Images `N×C×H×W` and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<S> {
    pub images: Tensor<S>,
    pub labels: Vec<usize>,
    pub meta: DatasetMeta,
    pub normalized: bool,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(images: Tensor<S>, labels: Vec<usize>, meta: DatasetMeta) -> Result<Self> {
        let m = &meta;
        images.expect_shape("Dataset::new", &[labels.len(), m.channels, m.height, m.width])?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= m.num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: m.num_classes,
            });
        }
        Ok(Dataset {
            images,
            labels,
            meta,
            normalized: false,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Dataset {
            images: self.images.gather_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            meta: self.meta.clone(),
            normalized: self.normalized,
        }
    }

    /// First `n` samples (or all, if fewer).
    pub fn head(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn gather(&self, idx: &[usize]) -> Batch<S> {
        Batch {
            images: self.images.gather_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// `(x − mean_c) / std_c` per channel; inputs are expected in `[0, 1]`.
    pub fn normalize(&mut self) {
        if self.normalized {
            return;
        }
        let hw = self.meta.height * self.meta.width;
        let c = self.meta.channels;
        let mean: Vec<S> = self.meta.mean.iter().map(|&v| S::from_f64c(v)).collect();
        let inv: Vec<S> = self.meta.std.iter().map(|&v| S::from_f64c(1.0 / v)).collect();
        for (i, plane) in self.images.data_mut().chunks_exact_mut(hw).enumerate() {
            let ch = i % c;
            for v in plane.iter_mut() {
                *v = (*v - mean[ch]) * inv[ch];
            }
        }
        self.normalized = true;
    }

    pub fn normalized(mut self) -> Self {
        self.normalize();
        self
    }

    /// Per-channel sample `(mean, std)` over the whole set.
    pub fn channel_stats(&self) -> Vec<(f64, f64)> {
        let hw = self.meta.height * self.meta.width;
        let c = self.meta.channels;
        let mut s = vec![(0.0f64, 0.0f64); c];
        for (i, plane) in self.images.data().chunks_exact(hw).enumerate() {
            let e = &mut s[i % c];
            for v in plane {
                let x = v.to_f64c();
                e.0 += x;
                e.1 += x * x;
            }
        }
        let n = (self.len() * hw) as f64;
        s.into_iter()
            .map(|(a, b)| {
                let m = a / n;
                (m, (b / n - m * m).max(0.0).sqrt())
            })
            .collect()
    }
}

/// Train and test halves of a dataset as shipped on disk.
pub struct RawSplits<S> {
    pub train: Dataset<S>,
    pub test: Dataset<S>,
}

fn first_existing(dir: &Path, names: &[&str]) -> Option<PathBuf> {
    names.iter().map(|n| dir.join(n)).find(|p| p.exists())
}

fn idx_pair(dir: &Path, prefix: &str) -> Result<(PathBuf, PathBuf)> {
    let imgs = [
        format!("{prefix}-images-idx3-ubyte"),
        format!("{prefix}-images.idx3-ubyte"),
    ];
    let labs = [
        format!("{prefix}-labels-idx1-ubyte"),
        format!("{prefix}-labels.idx1-ubyte"),
    ];
    let ir: Vec<&str> = imgs.iter().map(String::as_str).collect();
    let lr: Vec<&str> = labs.iter().map(String::as_str).collect();
    match (first_existing(dir, &ir), first_existing(dir, &lr)) {
        (Some(i), Some(l)) => Ok((i, l)),
        _ => Err(Error::format(
            dir,
            format!("missing {prefix} IDX files ({} / {})", imgs[0], labs[0]),
        )),
    }
}

/// Loads train and test sets for `kind` from `root/<dir_name>`, unnormalised.
pub fn load_dataset<S: Scalar>(kind: DatasetKind, root: &Path) -> Result<RawSplits<S>> {
    let dir = root.join(kind.dir_name());
    if !dir.is_dir() {
        return Err(Error::format(&dir, "dataset directory not found"));
    }
    match kind {
        DatasetKind::Mnist | DatasetKind::FashionMnist => {
            let (ti, tl) = idx_pair(&dir, "train")?;
            let (vi, vl) = idx_pair(&dir, "t10k")?;
            Ok(RawSplits {
                train: load_idx(&ti, &tl, kind)?,
                test: load_idx(&vi, &vl, kind)?,
            })
        }
        DatasetKind::Cifar10 => {
            let train: Vec<PathBuf> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
            Ok(RawSplits {
                train: load_cifar(&train, CifarVariant::Cifar10)?,
                test: load_cifar(&[dir.join("test_batch.bin")], CifarVariant::Cifar10)?,
            })
        }
        DatasetKind::Cifar100 => Ok(RawSplits {
            train: load_cifar(&[dir.join("train.bin")], CifarVariant::Cifar100)?,
            test: load_cifar(&[dir.join("test.bin")], CifarVariant::Cifar100)?,
        }),
    }
}
