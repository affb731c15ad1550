//! Forward-Forward: layer-local goodness objectives on label-embedded inputs.

use serde::{Deserialize, Serialize};

use crate::datasets::{batches, Dataset};
use crate::error::{Error, Result};
use crate::nn::{length_normalize, prefixed, prefixed_mut, relu_backward_mask, rms_normalize, Activation, Dense, StateDict, LENGTH_NORM_EPS};
use crate::numerics::{argmax_rows, softmax_crossentropy, RngStream, Scalar, StreamName, Tensor};
use crate::optim::{EarlyStopConfig, OptimConfig, Optimizer};

use super::common::{check_loss, evaluate_logits, predict_chunked, run_phase};
use super::{accuracy_pct, DataSplits, Metric, PhaseKind, TrainReport, ValStats};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Threshold {
    /// θ equals the layer width.
    Dynamic,
    Fixed(f64),
}

impl Threshold {
    pub fn value(self, width: usize) -> f64 {
        match self {
            Threshold::Dynamic => width as f64,
            Threshold::Fixed(t) => t,
        }
    }
}

/// How a layer's output is rescaled before it feeds the next layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InterLayerNorm {
    /// Unit L2 length.
    L2,
    /// Unit root-mean-square (L2 length `sqrt(width)`), which keeps goodness
    /// on the same scale as a width-sized threshold.
    #[default]
    Rms,
}

impl InterLayerNorm {
    pub fn apply<S: Scalar>(self, a: &Tensor<S>) -> Tensor<S> {
        match self {
            InterLayerNorm::L2 => length_normalize(a, LENGTH_NORM_EPS),
            InterLayerNorm::Rms => rms_normalize(a, LENGTH_NORM_EPS),
        }
    }
}

/// Value written into the active label slot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmbedValue {
    /// The image's own maximum pixel value.
    #[default]
    ImageMax,
    Constant(f64),
}

#[derive(Clone, Debug)]
pub struct FfConfig {
    pub optimizer: OptimConfig,
    pub downstream: OptimConfig,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub early_stop: EarlyStopConfig,
    pub threshold: Threshold,
    pub peer_factor: f64,
    pub peer_momentum: f64,
    pub normalization: InterLayerNorm,
    pub embed: EmbedValue,
    /// Whether layer 1 contributes to goodness aggregation at inference.
    pub include_first_layer: bool,
    /// Multipliers on each layer's local loss; `None` means all ones.
    pub layer_loss_weights: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FfNetwork<S> {
    pub layers: Vec<Dense<S>>,
    /// Per-layer running mean activity for peer normalization.
    pub running_mean: Vec<Tensor<S>>,
    pub classifier: Dense<S>,
    pub num_classes: usize,
    pub threshold: Threshold,
    pub normalization: InterLayerNorm,
}

impl<S: Scalar> FfNetwork<S> {
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        num_classes: usize,
        threshold: Threshold,
        normalization: InterLayerNorm,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if hidden.is_empty() || input_dim < num_classes || num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "FF network needs hidden layers and input_dim ≥ classes ≥ 2 (input {input_dim}, classes {num_classes})"
            )));
        }
        let mut layers = Vec::with_capacity(hidden.len());
        let mut prev = input_dim;
        for &h in hidden {
            layers.push(Dense::kaiming(prev, h, Activation::Relu, rng));
            prev = h;
        }
        let total: usize = hidden.iter().sum();
        Ok(FfNetwork {
            running_mean: hidden.iter().map(|&h| Tensor::zeros(&[h])).collect(),
            layers,
            classifier: Dense::kaiming(total, num_classes, Activation::None, rng),
            num_classes,
            threshold,
            normalization,
        })
    }

    /// Pre-normalization activations of every layer.
    pub fn activations(&self, x: &Tensor<S>) -> Result<Vec<Tensor<S>>> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let a = layer.infer(&h)?;
            if k + 1 < self.layers.len() {
                h = self.normalization.apply(&a);
            }
            out.push(a);
        }
        Ok(out)
    }

    /// Downstream logits from a neutral-label forward pass over flattened inputs.
    pub fn classifier_logits(&self, x: &Tensor<S>, embed: EmbedValue) -> Result<Tensor<S>> {
        let feats = self.classifier_features(&embed_neutral(x, self.num_classes, embed))?;
        self.classifier.infer(&feats)
    }

    fn classifier_features(&self, embedded: &Tensor<S>) -> Result<Tensor<S>> {
        let acts = self.activations(embedded)?;
        let normed: Vec<Tensor<S>> = acts.iter().map(|a| length_normalize(a, LENGTH_NORM_EPS)).collect();
        Tensor::concat_cols(&normed.iter().collect::<Vec<_>>())
    }
}

impl<S: Scalar> StateDict<S> for FfNetwork<S> {
    fn named_state(&self) -> Vec<(String, &Tensor<S>)> {
        let mut v = Vec::new();
        for (i, (l, rm)) in self.layers.iter().zip(&self.running_mean).enumerate() {
            v.extend(prefixed(&format!("layers.{i}"), l.named_state()));
            v.push((format!("layers.{i}.running_mean"), rm));
        }
        v.extend(prefixed("classifier", self.classifier.named_state()));
        v
    }

    fn named_state_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut v = Vec::new();
        for (i, (l, rm)) in self.layers.iter_mut().zip(self.running_mean.iter_mut()).enumerate() {
            v.extend(prefixed_mut(&format!("layers.{i}"), l.named_state_mut()));
            v.push((format!("layers.{i}.running_mean"), rm));
        }
        v.extend(prefixed_mut("classifier", self.classifier.named_state_mut()));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut v: Vec<_> = self.layers.iter_mut().flat_map(|l| l.params_mut()).collect();
        v.extend(self.classifier.params_mut());
        v
    }
}

fn embed_slot_value<S: Scalar>(row: &[S], embed: EmbedValue) -> S {
    match embed {
        EmbedValue::ImageMax => row.iter().copied().fold(S::neg_infinity(), S::max),
        EmbedValue::Constant(v) => S::from_f64c(v),
    }
}

/// Writes a one-hot label into the first `num_classes` entries of each row.
pub fn embed_label<S: Scalar>(x: &Tensor<S>, labels: &[usize], num_classes: usize, embed: EmbedValue) -> Result<Tensor<S>> {
    if x.rank() != 2 || x.dim(1) < num_classes || labels.len() != x.dim(0) {
        return Err(Error::shape(
            "embed_label",
            format!("{}×(≥{num_classes})", labels.len()),
            format!("{:?}", x.shape()),
        ));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::LabelOutOfRange { label, classes: num_classes });
    }
    let mut out = x.clone();
    for (i, &label) in labels.iter().enumerate() {
        let row = out.row_mut(i);
        let v = embed_slot_value(row, embed);
        row[..num_classes].iter_mut().for_each(|s| *s = S::zero());
        row[label] = v;
    }
    Ok(out)
}

/// Every label slot set to `v / num_classes`.
pub fn embed_neutral<S: Scalar>(x: &Tensor<S>, num_classes: usize, embed: EmbedValue) -> Tensor<S> {
    let mut out = x.clone();
    let k = S::from_usize_c(num_classes);
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let v = embed_slot_value(row, embed) / k;
        row[..num_classes].iter_mut().for_each(|s| *s = v);
    }
    out
}

/// Uniform draw over the wrong labels of each sample.
pub fn sample_negative_labels(labels: &[usize], num_classes: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument("negative labels need at least 2 classes".into()));
    }
    labels
        .iter()
        .map(|&y| {
            if y >= num_classes {
                return Err(Error::LabelOutOfRange { label: y, classes: num_classes });
            }
            let r = rng.below(num_classes - 1);
            Ok(if r >= y { r + 1 } else { r })
        })
        .collect()
}

/// Row-wise sum of squares.
pub fn goodness<S: Scalar>(a: &Tensor<S>) -> Vec<f64> {
    (0..a.rows()).map(|i| a.row(i).iter().map(|&v| v.to_f64c() * v.to_f64c()).sum()).collect()
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic FF loss, averaged over the batch, with gradients w.r.t. each goodness.
pub fn ff_layer_loss(g_pos: &[f64], g_neg: &[f64], theta: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let bp = g_pos.len().max(1) as f64;
    let bn = g_neg.len().max(1) as f64;
    let lp: f64 = g_pos.iter().map(|&g| softplus(theta - g)).sum::<f64>() / bp;
    let ln: f64 = g_neg.iter().map(|&g| softplus(g - theta)).sum::<f64>() / bn;
    let dp = g_pos.iter().map(|&g| -sigmoid(theta - g) / bp).collect();
    let dn = g_neg.iter().map(|&g| sigmoid(g - theta) / bn).collect();
    (lp + ln, dp, dn)
}

/// Updates `running_mean` in place and returns the peer loss and `∂loss/∂a`.
pub fn peer_normalization_loss<S: Scalar>(
    a: &Tensor<S>,
    running_mean: &mut Tensor<S>,
    factor: f64,
    momentum: f64,
) -> Result<(f64, Tensor<S>)> {
    let (b, n) = (a.rows(), a.row_len());
    running_mean.expect_shape("peer_normalization", &[n])?;
    let mut batch_mean = vec![0.0; n];
    for i in 0..b {
        for (m, &v) in batch_mean.iter_mut().zip(a.row(i)) {
            *m += v.to_f64c();
        }
    }
    let rm: Vec<f64> = running_mean
        .data()
        .iter()
        .zip(&batch_mean)
        .map(|(&r, &s)| momentum * r.to_f64c() + (1.0 - momentum) * s / b.max(1) as f64)
        .collect();
    for (dst, &r) in running_mean.data_mut().iter_mut().zip(&rm) {
        *dst = S::from_f64c(r);
    }
    let mu = rm.iter().sum::<f64>() / n.max(1) as f64;
    let loss = factor * rm.iter().map(|&r| (mu - r) * (mu - r)).sum::<f64>();
    let coef = 2.0 * factor * (1.0 - momentum) / b.max(1) as f64;
    let unit: Vec<S> = rm.iter().map(|&r| S::from_f64c(coef * (r - mu))).collect();
    let mut grad = Tensor::zeros(&[b, n]);
    for i in 0..b {
        grad.row_mut(i).copy_from_slice(&unit);
    }
    Ok((loss, grad))
}

fn vstack<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::from_vec(&[a.rows() + b.rows(), a.row_len()], data)
}

/// Per-layer quantities from one training step.
#[derive(Clone, Debug, Default)]
pub struct FfStepStats {
    pub layer_loss: Vec<f64>,
    pub peer_loss: Vec<f64>,
    /// Mean `g⁺ − g⁻` per layer, measured before the update.
    pub separation: Vec<f64>,
    pub classifier_loss: f64,
}

/// Local gradients for one batch: layer gradients in `layers` order
/// (weight, bias per layer) followed by the classifier's. Updates the
/// running means as a side effect.
pub fn ff_gradients<S: Scalar>(
    net: &mut FfNetwork<S>,
    x: &Tensor<S>,
    labels: &[usize],
    neg_labels: &[usize],
    cfg: &FfConfig,
) -> Result<(Vec<Tensor<S>>, FfStepStats)> {
    let nc = net.num_classes;
    let b = labels.len();
    let pos = embed_label(x, labels, nc, cfg.embed)?;
    let neg = embed_label(x, neg_labels, nc, cfg.embed)?;
    let mut h = vstack(&pos, &neg)?;
    let mut grads = Vec::with_capacity(2 * net.layers.len() + 2);
    let mut stats = FfStepStats::default();
    let last = net.layers.len() - 1;
    for k in 0..net.layers.len() {
        let layer = &net.layers[k];
        let z = layer.pre_activation(&h)?;
        let a = layer.activate(&z);
        let g = goodness(&a);
        let (gp, gn) = g.split_at(b);
        let theta = net.threshold.value(layer.output_dim());
        let (loss, dp, dn) = ff_layer_loss(gp, gn, theta);
        let weight = cfg.layer_loss_weights.as_ref().and_then(|w| w.get(k).copied()).unwrap_or(1.0);
        stats.separation.push(gp.iter().zip(gn).map(|(p, n)| p - n).sum::<f64>() / b.max(1) as f64);
        let a_pos = Tensor::from_vec(&[b, a.row_len()], a.data()[..b * a.row_len()].to_vec())?;
        let (peer, peer_grad) = peer_normalization_loss(&a_pos, &mut net.running_mean[k], cfg.peer_factor, cfg.peer_momentum)?;
        check_loss(weight * (loss + peer), || format!("FF layer {} loss", k + 1))?;
        stats.layer_loss.push(loss);
        stats.peer_loss.push(peer);
        let n = a.row_len();
        let mut grad_a = a.clone();
        for (i, dg) in dp.iter().chain(&dn).enumerate() {
            let s = S::from_f64c(2.0 * weight * dg);
            for v in grad_a.row_mut(i) {
                *v *= s;
            }
        }
        let w = S::from_f64c(weight);
        for (dst, &pg) in grad_a.data_mut()[..b * n].iter_mut().zip(peer_grad.data()) {
            *dst += w * pg;
        }
        let gz = relu_backward_mask(&grad_a, &z);
        let layer = &net.layers[k];
        let dg = layer.backward_from_gz(&h, &gz, false)?;
        grads.push(dg.w);
        grads.push(dg.b);
        if k < last {
            h = net.normalization.apply(&a);
        }
    }
    let feats = net.classifier_features(&embed_neutral(x, nc, cfg.embed))?;
    let logits = net.classifier.pre_activation(&feats)?;
    let (closs, gl) = softmax_crossentropy(&logits, labels)?;
    stats.classifier_loss = check_loss(closs.to_f64c(), || "FF classifier loss".into())?;
    let cg = net.classifier.backward_from_gz(&feats, &gl, false)?;
    grads.push(cg.w);
    grads.push(cg.b);
    Ok((grads, stats))
}

/// One shared update of all hidden layers plus a classifier update.
pub fn ff_train_step<S: Scalar>(
    net: &mut FfNetwork<S>,
    layer_opt: &mut Optimizer<S>,
    classifier_opt: &mut Optimizer<S>,
    x: &Tensor<S>,
    labels: &[usize],
    neg_labels: &[usize],
    cfg: &FfConfig,
) -> Result<FfStepStats> {
    let (grads, stats) = ff_gradients(net, x, labels, neg_labels, cfg)?;
    let split = 2 * net.layers.len();
    let (lg, cg) = grads.split_at(split);
    let layer_params: Vec<&mut Tensor<S>> = net.layers.iter_mut().flat_map(|l| l.params_mut()).collect();
    layer_opt.step(layer_params, &lg.iter().collect::<Vec<_>>())?;
    classifier_opt.step(net.classifier.params_mut(), &cg.iter().collect::<Vec<_>>())?;
    Ok(stats)
}

/// Summed goodness for every candidate label: `B × num_classes`.
pub fn ff_class_goodness<S: Scalar>(
    net: &FfNetwork<S>,
    x: &Tensor<S>,
    include_first_layer: bool,
    embed: EmbedValue,
) -> Result<Tensor<f64>> {
    let b = x.rows();
    let nc = net.num_classes;
    let mut scores = Tensor::zeros(&[b, nc]);
    for c in 0..nc {
        let acts = net.activations(&embed_label(x, &vec![c; b], nc, embed)?)?;
        let skip = usize::from(!include_first_layer && acts.len() > 1);
        for a in &acts[skip..] {
            for (i, g) in goodness(a).into_iter().enumerate() {
                scores.data_mut()[i * nc + c] += g;
            }
        }
    }
    Ok(scores)
}

/// Goodness-aggregation prediction; ties resolve to the lowest class.
pub fn ff_predict<S: Scalar>(net: &FfNetwork<S>, x: &Tensor<S>, include_first_layer: bool, embed: EmbedValue) -> Result<Vec<usize>> {
    Ok(argmax_rows(&ff_class_goodness(net, x, include_first_layer, embed)?))
}

pub fn ff_accuracy<S: Scalar>(net: &FfNetwork<S>, ds: &Dataset<S>, cfg: &FfConfig) -> Result<f64> {
    let pred = predict_chunked(ds, |b| ff_predict(net, &b.images.clone().flatten2(), cfg.include_first_layer, cfg.embed))?;
    Ok(accuracy_pct(&pred, &ds.labels))
}

pub fn ff_classifier_stats<S: Scalar>(net: &FfNetwork<S>, ds: &Dataset<S>, cfg: &FfConfig) -> Result<ValStats> {
    evaluate_logits(ds, |b| net.classifier_logits(&b.images.clone().flatten2(), cfg.embed))
}

pub fn train_ff<S: Scalar>(net: FfNetwork<S>, cfg: &FfConfig, data: &DataSplits<S>, seed: u64) -> Result<(FfNetwork<S>, TrainReport)> {
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let mut net = net;
    let mut layer_opt = Optimizer::new(cfg.optimizer);
    let mut classifier_opt = Optimizer::new(cfg.downstream);
    let mut shuffle = RngStream::new(StreamName::Shuffle, seed);
    let negatives = RngStream::new(StreamName::NegativeLabels, seed);
    let mut report = TrainReport::default();
    let mut separation = Vec::new();
    let phase = run_phase(
        &mut net,
        PhaseKind::Global,
        0,
        cfg.max_epochs,
        cfg.early_stop,
        Metric::ValAcc,
        &mut report.trace,
        |m, epoch| {
            let mut neg_rng = negatives.derive(epoch as u64, 0);
            let order = batches(data.train.len(), cfg.batch_size, true, &mut shuffle);
            let mut total = 0.0;
            let mut sep = vec![0.0; m.layers.len()];
            for idx in &order {
                let batch = data.train.gather(idx);
                let neg = sample_negative_labels(&batch.labels, m.num_classes, &mut neg_rng)?;
                let x = batch.images.flatten2();
                let s = ff_train_step(m, &mut layer_opt, &mut classifier_opt, &x, &batch.labels, &neg, cfg)?;
                total += s.layer_loss.iter().sum::<f64>() + s.peer_loss.iter().sum::<f64>();
                for (acc, v) in sep.iter_mut().zip(&s.separation) {
                    *acc += v / order.len() as f64;
                }
            }
            separation.push(sep);
            Ok(total / order.len().max(1) as f64)
        },
        |m| {
            Ok(ValStats {
                loss: None,
                acc: Some(ff_accuracy(m, &data.val, cfg)?),
            })
        },
    )?;
    report.phases.push(phase);
    report.val_acc = ff_accuracy(&net, &data.val, cfg)?;
    report.test_acc = ff_accuracy(&net, &data.test, cfg)?;
    if let Some(acc) = ff_classifier_stats(&net, &data.test, cfg)?.acc {
        report.aux.insert("downstream_test_acc".into(), acc);
    }
    if let Some(first) = separation.first() {
        for (k, v) in first.iter().enumerate() {
            report.aux.insert(format!("epoch1_separation_layer{}", k + 1), *v);
        }
    }
    Ok((net, report))
}
