//! End-to-end backpropagation baseline.

use crate::datasets::{augment, batches, AugmentPolicy, Dataset};
use crate::error::Result;
use crate::nn::{BnMode, Model, StateDict};
use crate::numerics::{softmax_crossentropy, RngStream, Scalar, StreamName, Tensor};
use crate::optim::{EarlyStopConfig, OptimConfig, Optimizer};

use super::common::{check_loss, evaluate_logits, run_phase};
use super::{DataSplits, Metric, PhaseKind, TrainReport, ValStats};

#[derive(Clone, Debug)]
pub struct BpConfig {
    pub optimizer: OptimConfig,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub early_stop: EarlyStopConfig,
    pub metric: Metric,
    pub augment: AugmentPolicy,
}

fn as_input<S: Scalar>(model: &Model<S>, x: Tensor<S>) -> Tensor<S> {
    match model {
        Model::Mlp(_) => x.flatten2(),
        Model::Cnn(_) => x,
    }
}

/// Mean CE and gradients in [`StateDict::params_mut`] order (train-mode BN).
pub fn bp_loss_and_grads<S: Scalar>(model: &mut Model<S>, x: &Tensor<S>, labels: &[usize]) -> Result<(S, Vec<Tensor<S>>)> {
    let x = as_input(model, x.clone());
    match model {
        Model::Mlp(m) => {
            let (logits, cache) = m.forward_cached(&x)?;
            let (loss, g) = softmax_crossentropy(&logits, labels)?;
            let grads = m.backward(&cache, &g)?;
            Ok((loss, grads.into_iter().flat_map(|d| [d.w, d.b]).collect()))
        }
        Model::Cnn(c) => {
            let (logits, cache) = c.forward(&x, BnMode::Train)?;
            let (loss, g) = softmax_crossentropy(&logits, labels)?;
            let (blocks, head) = c.backward(&cache, &g)?;
            let mut out: Vec<Tensor<S>> = blocks
                .into_iter()
                .flat_map(|b| [b.kernels, b.bias, b.gamma, b.beta])
                .collect();
            if let Some(h) = head {
                out.push(h.w);
                out.push(h.b);
            }
            Ok((loss, out))
        }
    }
}

/// One pass over `train` in the given batch order; returns the mean batch loss.
pub fn bp_train_epoch<S: Scalar>(
    model: &mut Model<S>,
    opt: &mut Optimizer<S>,
    train: &Dataset<S>,
    order: &[Vec<usize>],
    policy: &AugmentPolicy,
    aug_rng: &mut RngStream,
) -> Result<f64> {
    let mut total = 0.0;
    for (bi, idx) in order.iter().enumerate() {
        let b = train.gather(idx);
        let x = augment(&b.images, policy, aug_rng);
        let (loss, grads) = bp_loss_and_grads(model, &x, &b.labels)?;
        let loss = check_loss(loss.to_f64c(), || format!("BP loss at batch {bi}"))?;
        total += loss;
        let refs: Vec<&Tensor<S>> = grads.iter().collect();
        opt.step(model.params_mut(), &refs)?;
    }
    Ok(total / order.len().max(1) as f64)
}

pub fn bp_validate<S: Scalar>(model: &Model<S>, ds: &Dataset<S>) -> Result<ValStats> {
    evaluate_logits(ds, |b| model.infer(&b.images))
}

/// Trains until early stopping, restores the best-validation model and
/// reports its test accuracy.
pub fn train_bp<S: Scalar>(model: Model<S>, cfg: &BpConfig, data: &DataSplits<S>, seed: u64) -> Result<(Model<S>, TrainReport)> {
    let mut model = model;
    let mut opt = Optimizer::new(cfg.optimizer);
    let mut shuffle = RngStream::new(StreamName::Shuffle, seed);
    let mut aug = RngStream::new(StreamName::Augment, seed);
    let mut report = TrainReport::default();
    let phase = run_phase(
        &mut model,
        PhaseKind::Global,
        0,
        cfg.max_epochs,
        cfg.early_stop,
        cfg.metric,
        &mut report.trace,
        |m, _| {
            let order = batches(data.train.len(), cfg.batch_size, true, &mut shuffle);
            bp_train_epoch(m, &mut opt, &data.train, &order, &cfg.augment, &mut aug)
        },
        |m| bp_validate(m, &data.val),
    )?;
    report.phases.push(phase);
    report.val_acc = bp_validate(&model, &data.val)?.acc.unwrap_or(0.0);
    report.test_acc = bp_validate(&model, &data.test)?.acc.unwrap_or(0.0);
    Ok((model, report))
}
