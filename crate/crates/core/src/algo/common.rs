use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datasets::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::numerics::{argmax_rows, softmax_crossentropy, Scalar, Tensor};
use crate::optim::{EarlyStopConfig, EarlyStopper, StopDecision};

use super::Algorithm;

/// Samples per forward chunk during evaluation.
pub const EVAL_CHUNK: usize = 1000;

pub struct DataSplits<S> {
    pub train: Dataset<S>,
    pub val: Dataset<S>,
    pub test: Dataset<S>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseKind {
    /// End-to-end epochs over the whole network.
    Global,
    /// One layer trained on its own while earlier layers are frozen.
    Layer,
    /// One local classifier on frozen features.
    Predictor,
    /// Block pre-training before predictors.
    Block,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ValAcc,
    ValLoss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub kind: PhaseKind,
    pub index: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: PhaseKind,
    pub index: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
    pub elapsed_s: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ValStats {
    pub loss: Option<f64>,
    pub acc: Option<f64>,
}

impl ValStats {
    fn get(&self, m: Metric) -> Result<f64> {
        match m {
            Metric::ValAcc => self.acc,
            Metric::ValLoss => self.loss,
        }
        .ok_or_else(|| Error::Config(format!("metric {m:?} is not produced by this trainer")))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Percent, from the restored best checkpoint(s).
    pub test_acc: f64,
    /// Percent on the validation split, same model as `test_acc`.
    pub val_acc: f64,
    pub phases: Vec<PhaseRecord>,
    pub trace: Vec<EpochRecord>,
    /// Extra named metrics (e.g. auxiliary classifier accuracy).
    pub aux: BTreeMap<String, f64>,
}

/// Training effort: global epochs for BP/FF, summed per-layer epochs for MF,
/// summed predictor (plus block) epochs for CaFo.
pub fn effective_epochs(algo: Algorithm, phases: &[PhaseRecord]) -> usize {
    phases
        .iter()
        .filter(|p| match algo {
            Algorithm::Bp | Algorithm::Ff => p.kind == PhaseKind::Global,
            Algorithm::Mf => p.kind == PhaseKind::Layer,
            Algorithm::Cafo => matches!(p.kind, PhaseKind::Predictor | PhaseKind::Block),
        })
        .map(|p| p.epochs)
        .sum()
}

pub fn accuracy_pct(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    100.0 * hits as f64 / labels.len() as f64
}

/// Runs `predict` over `ds` in chunks of [`EVAL_CHUNK`].
pub fn predict_chunked<S: Scalar>(
    ds: &Dataset<S>,
    mut predict: impl FnMut(&Batch<S>) -> Result<Vec<usize>>,
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(ds.len());
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        out.extend(predict(&ds.gather(chunk))?);
    }
    Ok(out)
}

/// Mean CE and accuracy of a logit function over `ds`.
pub fn evaluate_logits<S: Scalar>(
    ds: &Dataset<S>,
    mut logits: impl FnMut(&Batch<S>) -> Result<Tensor<S>>,
) -> Result<ValStats> {
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut loss = 0.0;
    let mut hits = 0usize;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let b = ds.gather(chunk);
        let z = logits(&b)?;
        let (l, _) = softmax_crossentropy(&z, &b.labels)?;
        loss += l.to_f64c() * chunk.len() as f64;
        hits += argmax_rows(&z).iter().zip(&b.labels).filter(|(a, b)| a == b).count();
    }
    let n = ds.len().max(1) as f64;
    Ok(ValStats {
        loss: Some(loss / n),
        acc: Some(100.0 * hits as f64 / n),
    })
}

/// Wraps `B×d` features as a dataset shaped `B×d×1×1`, keeping labels and
/// metadata from `like`.
pub(crate) fn flat_dataset<S: Scalar>(features: Tensor<S>, like: &Dataset<S>) -> Result<Dataset<S>> {
    let (n, d) = (features.dim(0), features.dim(1));
    let mut meta = like.meta.clone();
    (meta.channels, meta.height, meta.width) = (d, 1, 1);
    let mut out = Dataset::new(features.reshape(&[n, d, 1, 1])?, like.labels.clone(), meta)?;
    out.normalized = like.normalized;
    Ok(out)
}

pub(crate) fn check_loss(loss: f64, context: impl FnOnce() -> String) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite(context()))
    }
}

/// Shared epoch loop: train, validate, early-stop, keep the best snapshot.
/// On return `model` holds the best snapshot.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_phase<M: Clone>(
    model: &mut M,
    kind: PhaseKind,
    index: usize,
    max_epochs: usize,
    stop: EarlyStopConfig,
    metric: Metric,
    trace: &mut Vec<EpochRecord>,
    mut train_epoch: impl FnMut(&mut M, usize) -> Result<f64>,
    mut validate: impl FnMut(&M) -> Result<ValStats>,
) -> Result<PhaseRecord> {
    if max_epochs == 0 {
        return Err(Error::InvalidArgument("at least one training epoch is required".into()));
    }
    let mut stopper = EarlyStopper::new(stop);
    let mut best = model.clone();
    let start = Instant::now();
    let mut epochs = 0;
    for epoch in 1..=max_epochs {
        let train_loss = train_epoch(model, epoch)?;
        let v = validate(model)?;
        epochs = epoch;
        trace.push(EpochRecord {
            phase: kind,
            index,
            epoch,
            train_loss,
            val_loss: v.loss,
            val_acc: v.acc,
            elapsed_s: start.elapsed().as_secs_f64(),
        });
        log::info!(
            "{kind:?}[{index}] epoch {epoch}: train_loss {train_loss:.5} val_loss {} val_acc {}",
            v.loss.map_or("-".into(), |x| format!("{x:.5}")),
            v.acc.map_or("-".into(), |x| format!("{x:.2}"))
        );
        match stopper.update(epoch, v.get(metric)?) {
            StopDecision::Improved => best = model.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    *model = best;
    Ok(PhaseRecord {
        kind,
        index,
        epochs,
        best_epoch: stopper.best_epoch,
        best_value: stopper.best_value.unwrap_or(f64::NAN),
    })
}
