use std::io::Read;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::DatasetKind;

#[derive(Clone, Debug, Serialize)]
pub struct FileCheck {
    pub file: String,
    pub present: bool,
    pub size: Option<u64>,
    pub expected_size: u64,
    pub sha256: Option<String>,
    pub expected_sha256: Option<&'static str>,
    pub ok: bool,
}

struct Expected {
    file: &'static str,
    size: u64,
    sha256: Option<&'static str>,
}

const fn e(file: &'static str, size: u64, sha256: Option<&'static str>) -> Expected {
    Expected { file, size, sha256 }
}

fn expected(kind: DatasetKind) -> Vec<Expected> {
    match kind {
        DatasetKind::Mnist => vec![
            e("train-images-idx3-ubyte", 47_040_016, Some("ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db")),
            e("train-labels-idx1-ubyte", 60_008, Some("65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5")),
            e("t10k-images-idx3-ubyte", 7_840_016, Some("0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7")),
            e("t10k-labels-idx1-ubyte", 10_008, Some("ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2")),
        ],
        DatasetKind::FashionMnist => vec![
            e("train-images-idx3-ubyte", 47_040_016, None),
            e("train-labels-idx1-ubyte", 60_008, None),
            e("t10k-images-idx3-ubyte", 7_840_016, None),
            e("t10k-labels-idx1-ubyte", 10_008, None),
        ],
        DatasetKind::Cifar10 => {
            let mut v: Vec<Expected> = ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"]
                .into_iter()
                .map(|f| e(f, 30_730_000, None))
                .collect();
            v.push(e("test_batch.bin", 30_730_000, None));
            v
        }
        DatasetKind::Cifar100 => vec![e("train.bin", 153_700_000, None), e("test.bin", 30_740_000, None)],
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).map_err(|err| Error::io(path, err))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = f.read(&mut buf).map_err(|err| Error::io(path, err))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Checks presence, size and (where known) SHA-256 of each expected file
/// under `root/<dir_name>`.
pub fn verify_dataset(kind: DatasetKind, root: &Path) -> Result<Vec<FileCheck>> {
    let dir = root.join(kind.dir_name());
    let mut out = Vec::new();
    for ex in expected(kind) {
        let p = dir.join(ex.file);
        let meta = std::fs::metadata(&p).ok();
        let size = meta.as_ref().map(|m| m.len());
        let sha = if meta.is_some() { Some(sha256_file(&p)?) } else { None };
        let ok = size == Some(ex.size)
            && match (ex.sha256, &sha) {
                (Some(want), Some(got)) => want == got,
                (None, _) => true,
                _ => false,
            };
        out.push(FileCheck {
            file: ex.file.to_string(),
            present: meta.is_some(),
            size,
            expected_size: ex.size,
            sha256: sha,
            expected_sha256: ex.sha256,
            ok,
        });
    }
    Ok(out)
}
