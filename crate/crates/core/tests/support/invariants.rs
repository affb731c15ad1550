//! Checks shared by the property tests and the acceptance runner.

use bpfree::algo::cafo::{dfa_gradients, train_cafo, CafoModel, DfaFeedback};
use bpfree::algo::mf::{train_mf, MfNetwork};
use bpfree::algo::PhaseKind;
use bpfree::datasets::DatasetKind;
use bpfree::harness::train_on;
use bpfree::nn::{Activation, Dense, ModelSpec, StateDict};
use bpfree::numerics::{RngStream, StreamName};
use bpfree::optim::Optimizer;
use bpfree::Tensor;

use super::{config, synthetic, CAFO_YAML, MF_YAML};

type Check = Result<(), String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// Replays the stopping rule by hand: returns `(stop_index, best_index)`.
pub fn stop_oracle(values: &[f64], maximize: bool, patience: usize, min_delta: f64) -> (Option<usize>, usize) {
    let mut best: Option<(usize, f64)> = None;
    let mut stale = 0;
    for (i, &v) in values.iter().enumerate() {
        let improved = match best {
            None => true,
            Some((_, b)) => {
                if maximize {
                    v > b + min_delta
                } else {
                    v < b - min_delta
                }
            }
        };
        if improved {
            best = Some((i, v));
            stale = 0;
        } else {
            stale += 1;
            if stale >= patience {
                return (Some(i), best.unwrap().0);
            }
        }
    }
    (None, best.map_or(0, |b| b.0))
}

/// Two runs with the same seed produce bitwise-identical traces.
pub fn same_run(yaml: &str) -> Check {
    let cfg = config(yaml);
    let data = synthetic::<f32>(DatasetKind::Mnist, [96, 48, 48], 3);
    let a = train_on(&cfg, &data, 7).map_err(|e| e.to_string())?.report;
    let b = train_on(&cfg, &data, 7).map_err(|e| e.to_string())?.report;
    ensure(!a.trace.is_empty(), "empty trace")?;
    ensure(a.trace.len() == b.trace.len(), "trace lengths differ")?;
    for (x, y) in a.trace.iter().zip(&b.trace) {
        ensure(
            x.train_loss.to_bits() == y.train_loss.to_bits()
                && x.val_loss.map(f64::to_bits) == y.val_loss.map(f64::to_bits)
                && x.val_acc.map(f64::to_bits) == y.val_acc.map(f64::to_bits),
            format!("epoch {} of phase {:?} differs", x.epoch, x.phase),
        )?;
    }
    ensure(a.test_acc.to_bits() == b.test_acc.to_bits(), "test accuracy differs")?;
    ensure(a.phases == b.phases, "phase records differ")
}

/// Layer 1 trained alone equals layer 1 after layer 2 was trained on top of it.
pub fn mf_layers_frozen() -> Check {
    let cfg = config(MF_YAML).mf_config().map_err(|e| e.to_string())?;
    let data = synthetic::<f64>(DatasetKind::Mnist, [96, 48, 48], 5);
    let one = MfNetwork::<f64>::new(784, &[24], 10, true, &mut RngStream::new(StreamName::WeightInit, 3)).unwrap();
    let two = MfNetwork::<f64>::new(784, &[24, 16], 10, true, &mut RngStream::new(StreamName::WeightInit, 3)).unwrap();
    ensure(one.layers[0].dense.w.bits_equal(&two.layers[0].dense.w), "initialisations differ")?;
    let (one, _) = train_mf(one, &cfg, &data, 9).map_err(|e| e.to_string())?;
    let (two, report) = train_mf(two, &cfg, &data, 9).map_err(|e| e.to_string())?;
    ensure(report.phases.len() == 2, "expected two layer phases")?;
    for ((na, a), (_, b)) in one.layers[0].named_state().into_iter().zip(two.layers[0].named_state()) {
        ensure(a.bits_equal(b), format!("{na} changed while a later layer trained"))?;
    }
    Ok(())
}

/// Random-init blocks are bitwise unchanged by predictor training.
pub fn cafo_rand_blocks_frozen() -> Check {
    let exp = config(CAFO_YAML);
    let cfg = exp.cafo_config().map_err(|e| e.to_string())?;
    let data = synthetic::<f32>(DatasetKind::Mnist, [64, 32, 32], 6);
    let ModelSpec::Cnn(spec) = ModelSpec::for_arch(exp.architecture, &data.train.meta, false) else {
        return Err("not a CNN".into());
    };
    let model = CafoModel::<f32>::new(spec, cfg.variant, &mut RngStream::new(StreamName::WeightInit, 4)).unwrap();
    let mut before = model.cnn.clone();
    let (mut after, report) = train_cafo(model, &cfg, &data, 4).map_err(|e| e.to_string())?;
    ensure(report.phases.iter().filter(|p| p.kind == PhaseKind::Predictor).count() == 3, "expected 3 predictors")?;
    let (pb, pa) = (before.params_mut(), after.cnn.params_mut());
    ensure(pb.len() == pa.len(), "parameter count changed")?;
    for (b, a) in pb.into_iter().zip(pa) {
        ensure(b.bits_equal(a), "a random-init block parameter changed")?;
    }
    Ok(())
}

/// DFA feedback matrices are bitwise unchanged while the blocks move.
pub fn dfa_feedback_fixed() -> Check {
    let exp = config(&CAFO_YAML.replace("variant: rand", "variant: dfa"));
    let cfg = exp.cafo_config().map_err(|e| e.to_string())?;
    let data = synthetic::<f32>(DatasetKind::Mnist, [32, 8, 8], 2);
    let ModelSpec::Cnn(spec) = ModelSpec::for_arch(exp.architecture, &data.train.meta, false) else {
        return Err("not a CNN".into());
    };
    let mut rng = RngStream::new(StreamName::WeightInit, 1);
    let mut model = CafoModel::<f32>::new(spec.clone(), cfg.variant, &mut rng).unwrap();
    let head = Dense::<f32>::kaiming(*spec.flat_dims().last().unwrap(), 10, Activation::None, &mut rng);
    let feedback = DfaFeedback::<f32>::new(&spec.flat_dims(), 10, cfg.dfa_scale, 11);
    let pristine = feedback.clone();
    ensure(feedback == DfaFeedback::new(&spec.flat_dims(), 10, cfg.dfa_scale, 11), "feedback not reproducible")?;
    let start = model.cnn.blocks[0].kernels.clone();
    let mut opt = Optimizer::new(cfg.block);
    let batch = data.train.gather(&(0..16).collect::<Vec<_>>());
    for _ in 0..3 {
        let step = dfa_gradients(&mut model.cnn, &head, &feedback, &batch.images, &batch.labels).map_err(|e| e.to_string())?;
        let n = model.cnn.params_mut().len();
        let refs: Vec<&Tensor<f32>> = step.grads[..n].iter().collect();
        opt.step(model.cnn.params_mut(), &refs).map_err(|e| e.to_string())?;
    }
    for (a, b) in feedback.matrices.iter().zip(&pristine.matrices) {
        ensure(a.bits_equal(b), "a feedback matrix changed")?;
    }
    ensure(!model.cnn.blocks[0].kernels.bits_equal(&start), "DFA step did not move the first block")
}
