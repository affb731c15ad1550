//! Cascaded-Forward: per-block linear predictors on a frozen (random or
//! DFA-pre-trained) convolutional stack, combined by summing logits.

use serde::{Deserialize, Serialize};

use crate::datasets::{augment, batches, AugmentPolicy, Dataset};
use crate::error::{Error, Result};
use crate::nn::{prefixed, prefixed_mut, Activation, BnMode, Cnn, CnnSpec, Dense, StateDict};
use crate::numerics::{argmax_rows, matmul_nt, softmax_crossentropy, uniform_init, RngStream, Scalar, StreamName, Tensor};
use crate::optim::{EarlyStopConfig, OptimConfig, Optimizer};

use super::common::{check_loss, evaluate_logits, flat_dataset, predict_chunked, run_phase, EVAL_CHUNK};
use super::{accuracy_pct, DataSplits, Metric, PhaseKind, PhaseRecord, TrainReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CafoVariant {
    Rand,
    Dfa,
}

#[derive(Clone, Debug)]
pub struct CafoConfig {
    pub variant: CafoVariant,
    pub predictor: OptimConfig,
    pub predictor_epochs: usize,
    pub predictor_stop: EarlyStopConfig,
    pub block: OptimConfig,
    pub block_epochs: usize,
    pub block_stop: EarlyStopConfig,
    pub batch_size: usize,
    /// Multiplier on the feedback-matrix init bound.
    pub dfa_scale: f64,
    /// Replace BatchNorm running statistics with exact training-set statistics
    /// before predictors are fit.
    pub calibrate_bn: bool,
    /// Applied to block pre-training batches only.
    pub augment: AugmentPolicy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CafoModel<S> {
    /// Convolutional stack without a head.
    pub cnn: Cnn<S>,
    pub predictors: Vec<Dense<S>>,
    pub variant: CafoVariant,
}

impl<S: Scalar> CafoModel<S> {
    pub fn new(spec: CnnSpec, variant: CafoVariant, rng: &mut RngStream) -> Result<Self> {
        let spec = CnnSpec { head: false, ..spec };
        let cnn = Cnn::new(spec.clone(), rng)?;
        let predictors = spec
            .flat_dims()
            .iter()
            .map(|&d| Dense::kaiming(d, spec.num_classes, Activation::None, rng))
            .collect();
        Ok(CafoModel { cnn, predictors, variant })
    }

    /// Eval-mode flattened output of every block.
    pub fn block_features(&self, x: &Tensor<S>) -> Result<Vec<Tensor<S>>> {
        let mut out = Vec::with_capacity(self.cnn.blocks.len());
        let mut h = x.clone();
        for b in &self.cnn.blocks {
            h = b.infer(&h)?;
            out.push(h.clone().flatten2());
        }
        Ok(out)
    }

    /// Logits of each predictor on its block's features.
    pub fn predictor_logits(&self, x: &Tensor<S>) -> Result<Vec<Tensor<S>>> {
        self.block_features(x)?
            .iter()
            .zip(&self.predictors)
            .map(|(f, p)| p.infer(f))
            .collect()
    }

    /// Elementwise sum of all predictors' logits.
    pub fn logits(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        sum_logits(&self.predictor_logits(x)?)
    }
}

impl<S: Scalar> StateDict<S> for CafoModel<S> {
    fn named_state(&self) -> Vec<(String, &Tensor<S>)> {
        let mut v = self.cnn.named_state();
        for (i, p) in self.predictors.iter().enumerate() {
            v.extend(prefixed(&format!("predictor{i}"), p.named_state()));
        }
        v
    }

    fn named_state_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut v = self.cnn.named_state_mut();
        for (i, p) in self.predictors.iter_mut().enumerate() {
            v.extend(prefixed_mut(&format!("predictor{i}"), p.named_state_mut()));
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut v = self.cnn.params_mut();
        for p in &mut self.predictors {
            v.extend(p.params_mut());
        }
        v
    }
}

pub fn sum_logits<S: Scalar>(parts: &[Tensor<S>]) -> Result<Tensor<S>> {
    let (first, rest) = parts
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("no predictor logits to sum".into()))?;
    let mut total = first.clone();
    for p in rest {
        total.add_assign(p)?;
    }
    Ok(total)
}

/// Argmax of summed predictor logits; ties go to the lowest class.
pub fn cafo_predict<S: Scalar>(model: &CafoModel<S>, x: &Tensor<S>) -> Result<Vec<usize>> {
    Ok(argmax_rows(&model.logits(x)?))
}

/// Fixed random matrices `B_k` (`flat_k × classes`) that carry the output
/// error to each block.
#[derive(Clone, Debug, PartialEq)]
pub struct DfaFeedback<S> {
    pub matrices: Vec<Tensor<S>>,
}

impl<S: Scalar> DfaFeedback<S> {
    pub fn new(flat_dims: &[usize], num_classes: usize, scale: f64, seed: u64) -> Self {
        let mut rng = RngStream::new(StreamName::DfaFeedback, seed);
        let bound = scale * (6.0 / num_classes as f64).sqrt();
        DfaFeedback {
            matrices: flat_dims.iter().map(|&d| uniform_init(&[d, num_classes], bound, &mut rng)).collect(),
        }
    }

    /// `δ_k = e B_kᵀ`, flattened per sample.
    pub fn project(&self, k: usize, e: &Tensor<S>) -> Result<Tensor<S>> {
        matmul_nt(e, &self.matrices[k])
    }
}

/// Statistics of one DFA step.
#[derive(Clone, Debug)]
pub struct DfaStep<S> {
    pub head_loss: S,
    /// Gradients in `cnn.params_mut()` order followed by the head's weight and bias.
    pub grads: Vec<Tensor<S>>,
}

/// Block gradients from the head error projected through `feedback`;
/// each block is differentiated only through its own stages.
pub fn dfa_gradients<S: Scalar>(
    cnn: &mut Cnn<S>,
    head: &Dense<S>,
    feedback: &DfaFeedback<S>,
    x: &Tensor<S>,
    labels: &[usize],
) -> Result<DfaStep<S>> {
    let mut caches = Vec::with_capacity(cnn.blocks.len());
    let mut shapes = Vec::with_capacity(cnn.blocks.len());
    let mut h = x.clone();
    for b in &mut cnn.blocks {
        let (y, c) = b.forward(&h, BnMode::Train)?;
        shapes.push(y.shape().to_vec());
        caches.push(c);
        h = y;
    }
    let flat = h.flatten2();
    let logits = head.pre_activation(&flat)?;
    let (loss, e) = softmax_crossentropy(&logits, labels)?;
    let mut grads = Vec::with_capacity(4 * cnn.blocks.len() + 2);
    for (k, b) in cnn.blocks.iter().enumerate() {
        let delta = feedback.project(k, &e)?.reshape(&shapes[k])?;
        let g = b.backward(&caches[k], &delta, false)?;
        grads.extend([g.kernels, g.bias, g.gamma, g.beta]);
    }
    let hg = head.backward_from_gz(&flat, &e, false)?;
    grads.push(hg.w);
    grads.push(hg.b);
    Ok(DfaStep { head_loss: loss, grads })
}

/// DFA pre-training of all blocks with a temporary head on the last block.
/// Returns the phase record; `model.cnn` holds the best-validation blocks.
pub fn dfa_pretrain_blocks<S: Scalar>(
    model: &mut CafoModel<S>,
    cfg: &CafoConfig,
    data: &DataSplits<S>,
    seed: u64,
    trace: &mut Vec<super::EpochRecord>,
) -> Result<PhaseRecord> {
    let spec = model.cnn.spec.clone();
    let flat = spec.flat_dims();
    let feedback = DfaFeedback::<S>::new(&flat, spec.num_classes, cfg.dfa_scale, seed);
    let mut init = RngStream::new(StreamName::WeightInit, seed).derive(0, 1);
    let head = Dense::kaiming(*flat.last().expect("cnn has blocks"), spec.num_classes, Activation::None, &mut init);
    let mut opt = Optimizer::new(cfg.block);
    let mut shuffle = RngStream::new(StreamName::Shuffle, seed).derive(0, 1);
    let mut aug = RngStream::new(StreamName::Augment, seed);
    let mut state = (model.cnn.clone(), head);
    let last = spec.block_channels.len() - 1;
    let phase = run_phase(
        &mut state,
        PhaseKind::Block,
        0,
        cfg.block_epochs,
        cfg.block_stop,
        Metric::ValLoss,
        trace,
        |(cnn, head), _| {
            let order = batches(data.train.len(), cfg.batch_size, true, &mut shuffle);
            let mut total = 0.0;
            for (bi, idx) in order.iter().enumerate() {
                let b = data.train.gather(idx);
                let x = augment(&b.images, &cfg.augment, &mut aug);
                let step = dfa_gradients(cnn, head, &feedback, &x, &b.labels)?;
                total += check_loss(step.head_loss.to_f64c(), || format!("DFA head loss at batch {bi}"))?;
                let mut params = cnn.params_mut();
                params.extend(head.params_mut());
                opt.step(params, &step.grads.iter().collect::<Vec<_>>())?;
            }
            Ok(total / order.len().max(1) as f64)
        },
        |(cnn, head)| evaluate_logits(&data.val, |b| head.infer(&cnn.features(&b.images, last)?)),
    )?;
    model.cnn = state.0;
    Ok(phase)
}

/// Sets every BatchNorm's running statistics to the exact training-set
/// population statistics, block by block.
pub fn calibrate_batchnorm<S: Scalar>(cnn: &mut Cnn<S>, train: &Dataset<S>) -> Result<()> {
    let idx: Vec<usize> = (0..train.len()).collect();
    for k in 0..cnn.blocks.len() {
        let c = cnn.blocks[k].out_channels();
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        let mut count = 0.0;
        for chunk in idx.chunks(EVAL_CHUNK) {
            let mut h = train.gather(chunk).images;
            for b in &cnn.blocks[..k] {
                h = b.infer(&h)?;
            }
            let p = cnn.blocks[k].pre_bn(&h)?;
            let (mean, var) = cnn.blocks[k].bn.batch_stats(&p)?;
            let n = (p.dim(0) * p.dim(2) * p.dim(3)) as f64;
            for ch in 0..c {
                sum[ch] += mean[ch] * n;
                sq[ch] += (var[ch] + mean[ch] * mean[ch]) * n;
            }
            count += n;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let var: Vec<f64> = sq.iter().zip(&mean).map(|(q, m)| (q / count - m * m).max(0.0)).collect();
        cnn.blocks[k].bn.set_running_stats(&mean, &var);
    }
    Ok(())
}

/// Fits one predictor on precomputed features with its own early stopping.
pub fn train_predictor<S: Scalar>(
    predictor: &mut Dense<S>,
    index: usize,
    train: &Dataset<S>,
    val: &Dataset<S>,
    cfg: &CafoConfig,
    seed: u64,
    trace: &mut Vec<super::EpochRecord>,
) -> Result<PhaseRecord> {
    let mut opt = Optimizer::new(cfg.predictor);
    let mut shuffle = RngStream::new(StreamName::Shuffle, seed).derive(index as u64 + 1, 0);
    run_phase(
        predictor,
        PhaseKind::Predictor,
        index,
        cfg.predictor_epochs,
        cfg.predictor_stop,
        Metric::ValLoss,
        trace,
        |p, _| {
            let order = batches(train.len(), cfg.batch_size, true, &mut shuffle);
            let mut total = 0.0;
            for idx in &order {
                let b = train.gather(idx);
                let x = b.images.flatten2();
                let z = p.pre_activation(&x)?;
                let (loss, g) = softmax_crossentropy(&z, &b.labels)?;
                total += check_loss(loss.to_f64c(), || format!("predictor {} loss", index + 1))?;
                let d = p.backward_from_gz(&x, &g, false)?;
                opt.step(p.params_mut(), &[&d.w, &d.b])?;
            }
            Ok(total / order.len().max(1) as f64)
        },
        |p| evaluate_logits(val, |b| p.infer(&b.images.clone().flatten2())),
    )
}

/// Block outputs (eval mode) of `prev`, one block further.
fn advance<S: Scalar>(cnn: &Cnn<S>, k: usize, prev: &Dataset<S>, base: &Dataset<S>) -> Result<Dataset<S>> {
    let shape_in: Vec<usize> = if k == 0 {
        base.images.shape()[1..].to_vec()
    } else {
        let (c, h, w) = cnn.spec.block_outputs()[k - 1];
        vec![c, h, w]
    };
    let src = if k == 0 { base } else { prev };
    let idx: Vec<usize> = (0..src.len()).collect();
    let mut data = Vec::new();
    let mut width = 0;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let b = src.gather(chunk);
        let mut dims = vec![chunk.len()];
        dims.extend(&shape_in);
        let y = cnn.blocks[k].infer(&b.images.reshape(&dims)?)?.flatten2();
        width = y.dim(1);
        data.extend_from_slice(y.data());
    }
    flat_dataset(Tensor::from_vec(&[src.len(), width], data)?, base)
}

pub fn cafo_accuracy<S: Scalar>(model: &CafoModel<S>, ds: &Dataset<S>) -> Result<f64> {
    let pred = predict_chunked(ds, |b| cafo_predict(model, &b.images))?;
    Ok(accuracy_pct(&pred, &ds.labels))
}

/// Optional DFA block phase, then three independent predictor phases.
pub fn train_cafo<S: Scalar>(model: CafoModel<S>, cfg: &CafoConfig, data: &DataSplits<S>, seed: u64) -> Result<(CafoModel<S>, TrainReport)> {
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let mut model = model;
    let mut report = TrainReport::default();
    if cfg.variant == CafoVariant::Dfa {
        let phase = dfa_pretrain_blocks(&mut model, cfg, data, seed, &mut report.trace)?;
        report.phases.push(phase);
    }
    if cfg.calibrate_bn {
        calibrate_batchnorm(&mut model.cnn, &data.train)?;
    }
    let (mut tr, mut va) = (data.train.clone(), data.val.clone());
    for k in 0..model.predictors.len() {
        tr = advance(&model.cnn, k, &tr, &data.train)?;
        va = advance(&model.cnn, k, &va, &data.val)?;
        let phase = train_predictor(&mut model.predictors[k], k, &tr, &va, cfg, seed, &mut report.trace)?;
        report.phases.push(phase);
    }
    drop((tr, va));
    let n = model.predictors.len();
    let mut hits = vec![0usize; n];
    let mut combined = 0usize;
    let idx: Vec<usize> = (0..data.test.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let b = data.test.gather(chunk);
        let logits = model.predictor_logits(&b.images)?;
        for (k, l) in logits.iter().enumerate() {
            hits[k] += argmax_rows(l).iter().zip(&b.labels).filter(|(p, y)| p == y).count();
        }
        combined += argmax_rows(&sum_logits(&logits)?).iter().zip(&b.labels).filter(|(p, y)| p == y).count();
    }
    let total = data.test.len().max(1) as f64;
    report.test_acc = 100.0 * combined as f64 / total;
    report.val_acc = cafo_accuracy(&model, &data.val)?;
    for (k, h) in hits.iter().enumerate() {
        report.aux.insert(format!("predictor{}_test_acc", k + 1), 100.0 * *h as f64 / total);
    }
    Ok((model, report))
}
