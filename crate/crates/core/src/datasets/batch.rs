use crate::numerics::{RngStream, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Batch<S> {
    pub images: Tensor<S>,
    pub labels: Vec<usize>,
}

impl<S> Batch<S> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Index batches covering `0..n` once; the last batch may be short.
/// A new permutation is drawn from `rng` on every call when `shuffle` is set.
pub fn batches(n: usize, batch_size: usize, shuffle: bool, rng: &mut RngStream) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let order: Vec<usize> = if shuffle { rng.permutation(n) } else { (0..n).collect() };
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
