#![allow(dead_code)]

pub mod gradcheck;
pub mod invariants;

use bpfree::numerics::{RngStream, StreamName};
use bpfree::Tensor64;

/// Seeded generator for random test instances.
pub struct Gen(RngStream);

impl Gen {
    pub fn new(seed: u64) -> Self {
        Gen(RngStream::new(StreamName::WeightInit, seed ^ 0x7e57))
    }

    /// Uniform integer in `lo..=hi`.
    pub fn dim(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.0.below(hi - lo + 1)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.0.uniform(lo, hi)
    }

    pub fn normal(&mut self) -> f64 {
        self.0.normal()
    }

    pub fn coin(&mut self) -> bool {
        self.0.bernoulli(0.5)
    }

    pub fn tensor(&mut self, shape: &[usize], scale: f64) -> Tensor64 {
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| scale * self.0.normal()).collect();
        Tensor64::from_vec(shape, v).unwrap()
    }

    pub fn labels(&mut self, n: usize, classes: usize) -> Vec<usize> {
        (0..n).map(|_| self.0.below(classes)).collect()
    }

    pub fn rng(&mut self) -> &mut RngStream {
        &mut self.0
    }
}

/// `Σ r ⊙ t`, the scalar probe used to test backward passes with upstream gradient `r`.
pub fn probe(t: &Tensor64, r: &Tensor64) -> f64 {
    t.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

use bpfree::algo::DataSplits;
use bpfree::datasets::{Dataset, DatasetKind};
use bpfree::harness::ExperimentConfig;
use bpfree::{Scalar, Tensor};

/// Class-prototype images plus noise, shaped like `kind`.
pub fn synthetic<S: Scalar>(kind: DatasetKind, sizes: [usize; 3], seed: u64) -> DataSplits<S> {
    let meta = kind.meta();
    let d = meta.channels * meta.height * meta.width;
    let mut g = Gen::new(seed);
    let protos: Vec<Vec<f64>> = (0..meta.num_classes).map(|_| (0..d).map(|_| g.normal()).collect()).collect();
    let mut make = |n: usize| {
        let labels = g.labels(n, meta.num_classes);
        let mut data = Vec::with_capacity(n * d);
        for &l in &labels {
            data.extend(protos[l].iter().map(|p| S::from_f64c(p + 0.7 * g.normal())));
        }
        let images = Tensor::from_vec(&[n, meta.channels, meta.height, meta.width], data).unwrap();
        let mut ds = Dataset::new(images, labels, meta.clone()).unwrap();
        ds.normalized = true;
        ds
    };
    DataSplits {
        train: make(sizes[0]),
        val: make(sizes[1]),
        test: make(sizes[2]),
    }
}

pub fn config(yaml: &str) -> ExperimentConfig {
    ExperimentConfig::from_yaml(yaml).unwrap()
}

pub const BP_YAML: &str = "
dataset: mnist
architecture: 2x1000
algorithm: bp
seeds: [0]
batch_size: 32
bp:
  optimizer: {kind: adamw, lr: 0.001, weight_decay: 0.0001}
  max_epochs: 3
";

pub const MF_YAML: &str = "
dataset: mnist
architecture: 2x1000
algorithm: mf
seeds: [0]
batch_size: 32
mf:
  optimizer: {kind: adam, lr: 0.001}
  epochs_per_layer: 3
";

pub const FF_YAML: &str = "
dataset: mnist
architecture: 3x1000
algorithm: ff
seeds: [0]
batch_size: 32
ff:
  optimizer: {kind: adamw, lr: 0.0005, weight_decay: 0.0004}
  downstream: {kind: adamw, lr: 0.01, weight_decay: 0.006}
  max_epochs: 2
";

pub const CAFO_YAML: &str = "
dataset: mnist
architecture: cnn3
algorithm: cafo
seeds: [0]
batch_size: 32
cafo:
  variant: rand
  predictor: {kind: adam, lr: 0.001}
  epochs_per_block: 3
  patience: 2
";
