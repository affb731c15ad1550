//! Mono-Forward: each layer learns from a local softmax over class
//! projections of its own activations.

use crate::datasets::{batches, Dataset};
use crate::error::{Error, Result};
use crate::nn::{prefixed, prefixed_mut, relu_backward_mask, Activation, Dense, StateDict};
use crate::numerics::{argmax_rows, kaiming_uniform_init, matmul, matmul_nt, matmul_tn, softmax_crossentropy, RngStream, Scalar, StreamName, Tensor};
use crate::optim::{EarlyStopConfig, OptimConfig, Optimizer};

use super::common::{check_loss, evaluate_logits, flat_dataset, predict_chunked, run_phase, EVAL_CHUNK};
use super::{accuracy_pct, DataSplits, Metric, PhaseKind, TrainReport, ValStats};

#[derive(Clone, Debug)]
pub struct MfConfig {
    pub optimizer: OptimConfig,
    pub epochs_per_layer: usize,
    pub batch_size: usize,
    pub early_stop: EarlyStopConfig,
    /// Precompute each layer's inputs once instead of streaming through the frozen prefix every epoch.
    pub cache_activations: bool,
    /// Predict from the sum of all layers' scores instead of the last layer's.
    pub aggregate: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MfLayer<S> {
    pub dense: Dense<S>,
    /// `classes × width` projection.
    pub m: Tensor<S>,
    pub use_bias: bool,
}

#[derive(Clone, Debug)]
pub struct MfGrads<S> {
    pub w: Tensor<S>,
    pub b: Tensor<S>,
    pub m: Tensor<S>,
}

impl<S: Scalar> MfLayer<S> {
    pub fn new(input: usize, width: usize, classes: usize, use_bias: bool, rng: &mut RngStream) -> Self {
        let dense = Dense::kaiming(input, width, Activation::Relu, rng);
        let m = kaiming_uniform_init(&[classes, width], width, rng);
        MfLayer { dense, m, use_bias }
    }

    /// Class scores of this layer's activations.
    pub fn scores(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        mf_goodness(&self.dense.infer(x)?, &self.m)
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        if self.use_bias {
            vec![&mut self.dense.w, &mut self.dense.b, &mut self.m]
        } else {
            vec![&mut self.dense.w, &mut self.m]
        }
    }
}

impl<S: Scalar> StateDict<S> for MfLayer<S> {
    fn named_state(&self) -> Vec<(String, &Tensor<S>)> {
        let mut v = self.dense.named_state();
        v.push(("projection".into(), &self.m));
        v
    }

    fn named_state_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut v = self.dense.named_state_mut();
        v.push(("projection".into(), &mut self.m));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        MfLayer::params_mut(self)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MfNetwork<S> {
    pub layers: Vec<MfLayer<S>>,
    pub num_classes: usize,
}

impl<S: Scalar> MfNetwork<S> {
    pub fn new(input_dim: usize, hidden: &[usize], num_classes: usize, use_bias: bool, rng: &mut RngStream) -> Result<Self> {
        if hidden.is_empty() || num_classes < 2 {
            return Err(Error::InvalidArgument("MF network needs at least one hidden layer and two classes".into()));
        }
        let mut layers = Vec::with_capacity(hidden.len());
        let mut prev = input_dim;
        for &h in hidden {
            layers.push(MfLayer::new(prev, h, num_classes, use_bias, rng));
            prev = h;
        }
        Ok(MfNetwork { layers, num_classes })
    }

    /// Output of the first `k` layers.
    pub fn prefix_features(&self, x: &Tensor<S>, k: usize) -> Result<Tensor<S>> {
        let mut h = x.clone();
        for l in &self.layers[..k] {
            h = l.dense.infer(&h)?;
        }
        Ok(h)
    }

    /// Last-layer scores, or the sum over layers when `aggregate` is set.
    pub fn scores(&self, x: &Tensor<S>, aggregate: bool) -> Result<Tensor<S>> {
        let mut h = x.clone();
        let mut total: Option<Tensor<S>> = None;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.dense.infer(&h)?;
            if aggregate || i + 1 == self.layers.len() {
                let g = mf_goodness(&h, &l.m)?;
                match &mut total {
                    Some(t) => t.add_assign(&g)?,
                    None => total = Some(g),
                }
            }
        }
        Ok(total.expect("network has at least one layer"))
    }
}

impl<S: Scalar> StateDict<S> for MfNetwork<S> {
    fn named_state(&self) -> Vec<(String, &Tensor<S>)> {
        let mut v = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            v.extend(prefixed(&format!("layers.{i}"), l.named_state()));
        }
        v
    }

    fn named_state_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut v = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            v.extend(prefixed_mut(&format!("layers.{i}"), l.named_state_mut()));
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// `G = a Mᵀ`.
pub fn mf_goodness<S: Scalar>(a: &Tensor<S>, m: &Tensor<S>) -> Result<Tensor<S>> {
    if a.rank() != 2 || m.rank() != 2 || a.dim(1) != m.dim(1) {
        return Err(Error::shape("mf_goodness", "B×n, m×n", format!("{:?} / {:?}", a.shape(), m.shape())));
    }
    matmul_nt(a, m)
}

/// Local CE loss of one layer and its gradients w.r.t. `W`, `b`, `M`.
pub fn mf_local_grads<S: Scalar>(layer: &MfLayer<S>, input: &Tensor<S>, labels: &[usize]) -> Result<(S, MfGrads<S>)> {
    let (z, a) = layer.dense.forward(input)?;
    let g = mf_goodness(&a, &layer.m)?;
    let (loss, dg) = softmax_crossentropy(&g, labels)?;
    let dm = matmul_tn(&dg, &a)?;
    let da = matmul(&dg, &layer.m)?;
    let dz = relu_backward_mask(&da, &z);
    let d = layer.dense.backward_from_gz(input, &dz, false)?;
    Ok((loss, MfGrads { w: d.w, b: d.b, m: dm }))
}

/// One optimizer step on a layer's `W`, `b` (if used) and `M`; returns the pre-step loss.
pub fn mf_local_step<S: Scalar>(layer: &mut MfLayer<S>, opt: &mut Optimizer<S>, input: &Tensor<S>, labels: &[usize]) -> Result<f64> {
    let (loss, g) = mf_local_grads(layer, input, labels)?;
    let loss = check_loss(loss.to_f64c(), || "MF local loss".into())?;
    let grads: Vec<&Tensor<S>> = if layer.use_bias { vec![&g.w, &g.b, &g.m] } else { vec![&g.w, &g.m] };
    opt.step(layer.params_mut(), &grads)?;
    Ok(loss)
}

pub fn mf_predict<S: Scalar>(net: &MfNetwork<S>, x: &Tensor<S>, aggregate: bool) -> Result<Vec<usize>> {
    Ok(argmax_rows(&net.scores(x, aggregate)?))
}

pub fn mf_accuracy<S: Scalar>(net: &MfNetwork<S>, ds: &Dataset<S>, aggregate: bool) -> Result<f64> {
    let pred = predict_chunked(ds, |b| mf_predict(net, &b.images.clone().flatten2(), aggregate))?;
    Ok(accuracy_pct(&pred, &ds.labels))
}

/// Inputs to layer `k` for the whole dataset, computed in chunks.
fn cached_inputs<S: Scalar>(net: &MfNetwork<S>, ds: &Dataset<S>, k: usize) -> Result<Dataset<S>> {
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut data = Vec::new();
    let mut width = 0;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let h = net.prefix_features(&ds.gather(chunk).images.flatten2(), k)?;
        width = h.dim(1);
        data.extend_from_slice(h.data());
    }
    flat_dataset(Tensor::from_vec(&[ds.len(), width], data)?, ds)
}

/// Trains layers strictly in order; each layer is early-stopped on its
/// local validation loss and frozen at its best epoch.
pub fn train_mf<S: Scalar>(net: MfNetwork<S>, cfg: &MfConfig, data: &DataSplits<S>, seed: u64) -> Result<(MfNetwork<S>, TrainReport)> {
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let mut net = net;
    let mut shuffle = RngStream::new(StreamName::Shuffle, seed);
    let mut report = TrainReport::default();
    for k in 0..net.layers.len() {
        let (prefix, rest) = net.layers.split_at_mut(k);
        let frozen = MfNetwork {
            layers: prefix.to_vec(),
            num_classes: net.num_classes,
        };
        let cache = if cfg.cache_activations {
            Some((cached_inputs(&frozen, &data.train, k)?, cached_inputs(&frozen, &data.val, k)?))
        } else {
            None
        };
        let input = |ds: &Dataset<S>, idx: &[usize], cached: Option<&Dataset<S>>| -> Result<(Tensor<S>, Vec<usize>)> {
            match cached {
                Some(c) => {
                    let b = c.gather(idx);
                    Ok((b.images.flatten2(), b.labels))
                }
                None => {
                    let b = ds.gather(idx);
                    Ok((frozen.prefix_features(&b.images.flatten2(), k)?, b.labels))
                }
            }
        };
        let mut opt = Optimizer::new(cfg.optimizer);
        let layer = &mut rest[0];
        let phase = run_phase(
            layer,
            PhaseKind::Layer,
            k,
            cfg.epochs_per_layer,
            cfg.early_stop,
            Metric::ValLoss,
            &mut report.trace,
            |l, _| {
                let order = batches(data.train.len(), cfg.batch_size, true, &mut shuffle);
                let mut total = 0.0;
                for idx in &order {
                    let (x, y) = input(&data.train, idx, cache.as_ref().map(|c| &c.0))?;
                    total += mf_local_step(l, &mut opt, &x, &y)?;
                }
                Ok(total / order.len().max(1) as f64)
            },
            |l| {
                let src = cache.as_ref().map_or(&data.val, |c| &c.1);
                evaluate_logits(src, |b| {
                    let x = b.images.clone().flatten2();
                    let x = if cache.is_some() { x } else { frozen.prefix_features(&x, k)? };
                    l.scores(&x)
                })
            },
        )?;
        report.phases.push(phase);
    }
    report.val_acc = mf_accuracy(&net, &data.val, cfg.aggregate)?;
    report.test_acc = mf_accuracy(&net, &data.test, cfg.aggregate)?;
    if !cfg.aggregate {
        report.aux.insert("aggregate_test_acc".into(), mf_accuracy(&net, &data.test, true)?);
    }
    Ok((net, report))
}

/// Validation statistics of layer `k`'s local classifier.
pub fn mf_layer_val_stats<S: Scalar>(net: &MfNetwork<S>, k: usize, ds: &Dataset<S>) -> Result<ValStats> {
    evaluate_logits(ds, |b| net.layers[k].scores(&net.prefix_features(&b.images.clone().flatten2(), k)?))
}
