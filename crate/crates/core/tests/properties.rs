mod support;

use proptest::prelude::*;

use bpfree::algo::{effective_epochs, Algorithm, PhaseKind, PhaseRecord};
use bpfree::datasets::DatasetKind;
use bpfree::harness::train_on;
use bpfree::numerics::{argmax_rows, softmax_crossentropy, softmax_rows};
use bpfree::optim::{EarlyStopConfig, EarlyStopper, Mode, StopDecision};
use bpfree::Tensor64;

use support::invariants::{self, stop_oracle};
use support::{config, synthetic, BP_YAML, CAFO_YAML, FF_YAML, MF_YAML};

proptest! {
    #[test]
    fn early_stopper_matches_replayed_rule(
        values in prop::collection::vec(0.0f64..1.0, 1..40),
        patience in 1usize..6,
        min_delta in prop::sample::select(vec![0.0, 0.01, 0.1]),
        maximize in any::<bool>(),
    ) {
        let mode = if maximize { Mode::Maximize } else { Mode::Minimize };
        let mut s = EarlyStopper::new(EarlyStopConfig { mode, patience, min_delta });
        let mut stopped = None;
        for (i, &v) in values.iter().enumerate() {
            if s.update(i, v) == StopDecision::Stop {
                stopped = Some(i);
                break;
            }
        }
        let (stop, best) = stop_oracle(&values, maximize, patience, min_delta);
        prop_assert_eq!(stopped, stop);
        prop_assert_eq!(s.best_epoch, best);
    }

    #[test]
    fn strictly_improving_trace_never_stops(start in -5.0f64..5.0, steps in prop::collection::vec(0.02f64..1.0, 1..30)) {
        let mut s = EarlyStopper::new(EarlyStopConfig { mode: Mode::Maximize, patience: 1, min_delta: 0.01 });
        let mut v = start;
        for (i, d) in steps.iter().enumerate() {
            prop_assert_eq!(s.update(i, v), StopDecision::Improved);
            v += d;
        }
    }

    #[test]
    fn flat_trace_stops_after_patience(patience in 1usize..10, v in -3.0f64..3.0) {
        let mut s = EarlyStopper::new(EarlyStopConfig { mode: Mode::Minimize, patience, min_delta: 0.0 });
        prop_assert_eq!(s.update(0, v), StopDecision::Improved);
        for i in 1..patience {
            prop_assert_eq!(s.update(i, v), StopDecision::Continue);
        }
        prop_assert_eq!(s.update(patience, v), StopDecision::Stop);
        prop_assert_eq!(s.best_epoch, 0);
    }

    #[test]
    fn softmax_is_shift_invariant(
        rows in prop::collection::vec(prop::collection::vec(-20.0f64..20.0, 4), 1..6),
        shift in -100.0f64..100.0,
    ) {
        let x = Tensor64::from_rows(&rows);
        let y = x.map(|v| v + shift);
        let (sx, sy) = (softmax_rows(&x), softmax_rows(&y));
        for (a, b) in sx.data().iter().zip(sy.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let labels: Vec<usize> = (0..rows.len()).map(|i| i % 4).collect();
        let ((lx, gx), (ly, gy)) = (softmax_crossentropy(&x, &labels).unwrap(), softmax_crossentropy(&y, &labels).unwrap());
        prop_assert!((lx - ly).abs() < 1e-9 * (1.0 + lx.abs()));
        for (a, b) in gx.data().iter().zip(gy.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_breaks_ties_towards_lowest_index(
        row in prop::collection::vec(-5i32..5, 2..12),
        dup in 0usize..12,
    ) {
        let mut row: Vec<f64> = row.into_iter().map(f64::from).collect();
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let d = dup % row.len();
        row[d] = max;
        let first = row.iter().position(|&v| v == max).unwrap();
        prop_assert_eq!(argmax_rows(&Tensor64::from_rows(&[row])), vec![first]);
    }

    #[test]
    fn effective_epochs_follow_per_algorithm_units(
        phases in prop::collection::vec((0usize..4, 0usize..50), 0..10),
    ) {
        let kinds = [PhaseKind::Global, PhaseKind::Layer, PhaseKind::Predictor, PhaseKind::Block];
        let records: Vec<PhaseRecord> = phases
            .iter()
            .enumerate()
            .map(|(i, &(k, e))| PhaseRecord { kind: kinds[k], index: i, epochs: e, best_epoch: e, best_value: 0.0 })
            .collect();
        let sum = |pick: &[usize]| phases.iter().filter(|(k, _)| pick.contains(k)).map(|(_, e)| e).sum::<usize>();
        prop_assert_eq!(effective_epochs(Algorithm::Bp, &records), sum(&[0]));
        prop_assert_eq!(effective_epochs(Algorithm::Ff, &records), sum(&[0]));
        prop_assert_eq!(effective_epochs(Algorithm::Mf, &records), sum(&[1]));
        prop_assert_eq!(effective_epochs(Algorithm::Cafo, &records), sum(&[2, 3]));
    }
}

#[test]
fn cafo_logit_sum_ties_pick_lowest_class() {
    let a = Tensor64::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.0, 0.0, 0.0]]);
    let b = Tensor64::from_rows(&[vec![1.0, 2.0, 0.0], vec![0.0, 0.0, 0.0]]);
    let s = bpfree::algo::cafo::sum_logits(&[a, b]).unwrap();
    assert_eq!(argmax_rows(&s), vec![0, 0]);
}

#[test]
fn bp_runs_are_deterministic() {
    invariants::same_run(BP_YAML).unwrap();
}

#[test]
fn mf_runs_are_deterministic() {
    invariants::same_run(MF_YAML).unwrap();
}

#[test]
fn ff_runs_are_deterministic() {
    invariants::same_run(FF_YAML).unwrap();
}

#[test]
fn cafo_runs_are_deterministic() {
    invariants::same_run(CAFO_YAML).unwrap();
}

#[test]
fn different_seeds_give_different_initialisations() {
    let cfg = config(MF_YAML);
    let data = synthetic::<f32>(DatasetKind::Mnist, [64, 32, 32], 3);
    let a = train_on(&cfg, &data, 1).unwrap().report;
    let b = train_on(&cfg, &data, 2).unwrap().report;
    assert_ne!(a.trace[0].train_loss.to_bits(), b.trace[0].train_loss.to_bits());
}

#[test]
fn mf_earlier_layers_stay_frozen() {
    invariants::mf_layers_frozen().unwrap();
}

#[test]
fn cafo_rand_blocks_stay_frozen() {
    invariants::cafo_rand_blocks_frozen().unwrap();
}

#[test]
fn dfa_feedback_stays_fixed_while_blocks_learn() {
    invariants::dfa_feedback_fixed().unwrap();
}
