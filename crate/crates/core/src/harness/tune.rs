use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_yaml::Value;

use crate::algo::cafo::CafoVariant;
use crate::algo::Algorithm;
use crate::error::{Error, Result};
use crate::numerics::{RngStream, StreamName};

use super::config::{set_dotted, Distribution, ExperimentConfig, ParamRange};
use super::run::Trainer;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub params: BTreeMap<String, f64>,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: Trial,
    pub trials: Vec<Trial>,
    /// Config of the best trial, resolved.
    pub best_config: ExperimentConfig,
}

fn log_uniform(key: &str, low: f64, high: f64) -> ParamRange {
    ParamRange {
        key: key.into(),
        dist: Distribution::LogUniform { low, high },
    }
}

/// Search space used when the config has no `tune.space`.
pub fn default_space(cfg: &ExperimentConfig) -> Vec<ParamRange> {
    match cfg.algorithm {
        Algorithm::Bp => vec![
            log_uniform("bp.optimizer.lr", 1e-5, 1e-2),
            log_uniform("bp.optimizer.weight_decay", 1e-6, 1e-3),
        ],
        Algorithm::Ff => vec![
            log_uniform("ff.optimizer.lr", 2e-4, 5e-3),
            log_uniform("ff.optimizer.weight_decay", 1e-4, 1e-3),
            log_uniform("ff.downstream.lr", 2e-3, 5e-2),
            log_uniform("ff.downstream.weight_decay", 1e-3, 1e-2),
        ],
        Algorithm::Cafo => {
            let mut s = vec![
                log_uniform("cafo.predictor.lr", 2e-4, 5e-3),
                log_uniform("cafo.predictor.weight_decay", 1e-7, 1e-4),
            ];
            if cfg.cafo.as_ref().is_some_and(|c| c.variant == CafoVariant::Dfa) {
                s.push(log_uniform("cafo.block.lr", 2e-5, 5e-4));
                s.push(log_uniform("cafo.block.weight_decay", 1e-7, 1e-4));
            }
            s
        }
        Algorithm::Mf => vec![
            log_uniform("mf.optimizer.lr", 1e-5, 1e-2),
            ParamRange {
                key: "mf.epochs_per_layer".into(),
                dist: Distribution::IntUniform { low: 5, high: 30 },
            },
        ],
    }
}

/// Draws one value; integer draws are inclusive of both bounds.
pub fn sample(dist: &Distribution, rng: &mut RngStream) -> Result<Value> {
    match *dist {
        Distribution::LogUniform { low, high } => {
            if !(low > 0.0 && low <= high && high.is_finite()) {
                return Err(Error::Config(format!("log-uniform bounds [{low}, {high}] are invalid")));
            }
            Ok(Value::from(rng.uniform(low.ln(), high.ln()).exp().clamp(low, high)))
        }
        Distribution::Uniform { low, high } => {
            if !(low <= high && low.is_finite() && high.is_finite()) {
                return Err(Error::Config(format!("uniform bounds [{low}, {high}] are invalid")));
            }
            Ok(Value::from(rng.uniform(low, high)))
        }
        Distribution::IntUniform { low, high } => {
            if low > high {
                return Err(Error::Config(format!("integer bounds [{low}, {high}] are invalid")));
            }
            let span = (high - low) as usize + 1;
            Ok(Value::from(low + rng.below(span) as i64))
        }
    }
}

fn apply_epoch_budget(cfg: &mut ExperimentConfig, cap: usize) {
    if let Some(s) = &mut cfg.bp {
        s.max_epochs = s.max_epochs.min(cap);
    }
    if let Some(s) = &mut cfg.ff {
        s.max_epochs = s.max_epochs.min(cap);
    }
    if let Some(s) = &mut cfg.mf {
        s.epochs_per_layer = s.epochs_per_layer.min(cap);
    }
    if let Some(s) = &mut cfg.cafo {
        s.epochs_per_block = s.epochs_per_block.min(cap);
        s.block_epochs = s.block_epochs.map(|e| e.min(cap));
    }
}

/// Random search over `space` (or the config's / default space), one run per
/// trial on the config's first seed. The highest validation accuracy wins;
/// ties keep the earliest trial.
pub fn random_search_tune(
    cfg: &ExperimentConfig,
    space: Option<&[ParamRange]>,
    trials: usize,
    seed: u64,
    trainer: &mut dyn Trainer,
) -> Result<TuneResult> {
    if trials == 0 {
        return Err(Error::Config("tuning needs at least one trial".into()));
    }
    let mut base_cfg = cfg.clone();
    base_cfg.resolve()?;
    let tune = base_cfg.tune.clone().unwrap_or_default();
    let space: Vec<ParamRange> = match (space, &tune.space) {
        (Some(s), _) => s.to_vec(),
        (None, Some(s)) => s.clone(),
        (None, None) => default_space(&base_cfg),
    };
    if space.is_empty() {
        return Err(Error::Config("search space is empty".into()));
    }
    let run_seed = base_cfg.seeds[0];
    let base = base_cfg.to_value()?;
    let mut rng = RngStream::new(StreamName::Search, seed);
    let mut all = Vec::with_capacity(trials);
    let mut best: Option<(Trial, ExperimentConfig)> = None;
    for index in 0..trials {
        let mut value = base.clone();
        let mut params = BTreeMap::new();
        for p in &space {
            let v = sample(&p.dist, &mut rng)?;
            params.insert(p.key.clone(), v.as_f64().unwrap_or_default());
            set_dotted(&mut value, &p.key, v)?;
        }
        let mut trial_cfg = ExperimentConfig::from_value(value)?;
        if let Some(cap) = tune.budget_epochs {
            apply_epoch_budget(&mut trial_cfg, cap);
        }
        trial_cfg.seeds = vec![run_seed];
        trial_cfg.resolve()?;
        trainer.prepare(&trial_cfg)?;
        let out = trainer.train(&trial_cfg, run_seed)?;
        let trial = Trial {
            index,
            params,
            val_acc: out.report.val_acc,
            test_acc: out.report.test_acc,
        };
        log::info!("trial {index}: val_acc {:.3} {:?}", trial.val_acc, trial.params);
        let score = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };
        if best.as_ref().is_none_or(|(b, _)| score(trial.val_acc) > score(b.val_acc)) {
            best = Some((trial.clone(), trial_cfg));
        }
        all.push(trial);
    }
    let (best, best_config) = best.expect("at least one trial");
    Ok(TuneResult {
        best,
        trials: all,
        best_config,
    })
}
