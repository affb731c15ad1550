use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_yaml::{Mapping, Value};
use sha2::{Digest, Sha256};

use crate::algo::bp::BpConfig;
use crate::algo::cafo::{CafoConfig, CafoVariant};
use crate::algo::ff::{EmbedValue, FfConfig, InterLayerNorm, Threshold};
use crate::algo::mf::MfConfig;
use crate::algo::{Algorithm, Metric};
use crate::datasets::{AugmentPolicy, DatasetKind};
use crate::error::{Error, Result};
use crate::nn::Architecture;
use crate::optim::{EarlyStopConfig, Mode, OptimConfig};
use crate::profiling::ProfilingConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStopping {
    pub metric: Metric,
    pub mode: Mode,
    pub patience: usize,
    #[serde(default)]
    pub min_delta: f64,
}

impl EarlyStopping {
    pub fn stop_config(&self) -> EarlyStopConfig {
        EarlyStopConfig {
            mode: self.mode,
            patience: self.patience,
            min_delta: self.min_delta,
        }
    }
}

fn default_bp_epochs() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BpSection {
    pub optimizer: OptimConfig,
    #[serde(default = "default_bp_epochs")]
    pub max_epochs: usize,
}

fn default_peer_factor() -> f64 {
    0.03
}
fn default_peer_momentum() -> f64 {
    0.9
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FfSection {
    /// Shared optimizer for all hidden layers.
    pub optimizer: OptimConfig,
    /// Optimizer of the downstream linear classifier.
    pub downstream: OptimConfig,
    #[serde(default = "default_bp_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_threshold")]
    pub threshold: Threshold,
    #[serde(default = "default_peer_factor")]
    pub peer_factor: f64,
    #[serde(default = "default_peer_momentum")]
    pub peer_momentum: f64,
    #[serde(default)]
    pub normalization: InterLayerNorm,
    #[serde(default)]
    pub embed: EmbedValue,
    #[serde(default = "default_true")]
    pub include_first_layer: bool,
}

fn default_threshold() -> Threshold {
    Threshold::Dynamic
}

fn default_dfa_scale() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CafoSection {
    pub variant: CafoVariant,
    pub predictor: OptimConfig,
    /// Epoch cap per predictor (and per block phase for DFA unless overridden).
    pub epochs_per_block: usize,
    pub patience: usize,
    #[serde(default)]
    pub block: Option<OptimConfig>,
    #[serde(default)]
    pub block_epochs: Option<usize>,
    #[serde(default)]
    pub block_patience: Option<usize>,
    #[serde(default = "default_dfa_scale")]
    pub dfa_scale: f64,
    #[serde(default)]
    pub calibrate_bn: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MfSection {
    pub optimizer: OptimConfig,
    pub epochs_per_layer: usize,
    #[serde(default = "default_true")]
    pub bias: bool,
    #[serde(default)]
    pub cache_activations: bool,
    #[serde(default)]
    pub aggregate: bool,
}

/// One searched hyperparameter, addressed by a dotted key such as `bp.optimizer.lr`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRange {
    pub key: String,
    pub dist: Distribution,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum Distribution {
    LogUniform { low: f64, high: f64 },
    Uniform { low: f64, high: f64 },
    IntUniform { low: i64, high: i64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TuneSection {
    #[serde(default)]
    pub space: Option<Vec<ParamRange>>,
    /// Epoch cap applied to every trial.
    #[serde(default)]
    pub budget_epochs: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub dataset: DatasetKind,
    pub architecture: Architecture,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Seed of the train/validation split, shared by all run seeds.
    #[serde(default)]
    pub split_seed: u64,
    /// Keep only the first N training samples after the split.
    #[serde(default)]
    pub train_subset: Option<usize>,
    #[serde(default)]
    pub augment: Option<AugmentPolicy>,
    /// Stopping rule of the algorithm's primary training unit.
    #[serde(default)]
    pub early_stopping: Option<EarlyStopping>,
    #[serde(default, alias = "monitors")]
    pub profiling: ProfilingConfig,
    #[serde(default)]
    pub save_checkpoints: bool,
    #[serde(default)]
    pub bp: Option<BpSection>,
    #[serde(default)]
    pub ff: Option<FfSection>,
    #[serde(default)]
    pub cafo: Option<CafoSection>,
    #[serde(default)]
    pub mf: Option<MfSection>,
    #[serde(default)]
    pub tune: Option<TuneSection>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// Recursively merges `child` over `parent`: mappings merge key by key,
/// anything else in the child replaces the parent's value.
pub fn merge_values(parent: Value, child: Value) -> Value {
    match (parent, child) {
        (Value::Mapping(mut p), Value::Mapping(c)) => {
            for (k, v) in c {
                let merged = match p.remove(&k) {
                    Some(pv) => merge_values(pv, v),
                    None => v,
                };
                p.insert(k, merged);
            }
            Value::Mapping(p)
        }
        (_, c) => c,
    }
}

fn read_yaml(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_yaml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Reads `path` and folds in its `base:` chain (paths relative to the
/// referring file). The returned mapping has no `base` key.
pub fn load_resolved_value(path: &Path) -> Result<Value> {
    let mut seen = BTreeSet::new();
    resolve_chain(path, &mut seen)
}

fn resolve_chain(path: &Path, seen: &mut BTreeSet<PathBuf>) -> Result<Value> {
    let canon = path.canonicalize().map_err(|e| Error::io(path, e))?;
    if !seen.insert(canon.clone()) {
        return Err(Error::Config(format!("inheritance cycle through {}", canon.display())));
    }
    let mut value = read_yaml(&canon)?;
    let Value::Mapping(map) = &mut value else {
        return Err(Error::Config(format!("{}: top level must be a mapping", canon.display())));
    };
    match map.remove("base") {
        None | Some(Value::Null) => Ok(value),
        Some(Value::String(rel)) => {
            let dir = canon.parent().unwrap_or(Path::new("."));
            let parent = resolve_chain(&dir.join(rel), seen)?;
            Ok(merge_values(parent, value))
        }
        Some(other) => Err(Error::Config(format!("{}: `base` must be a path, got {other:?}", canon.display()))),
    }
}

/// Sets a dotted key (`a.b.c`) inside a YAML mapping, creating mappings on the way.
pub fn set_dotted(value: &mut Value, key: &str, new: Value) -> Result<()> {
    let mut cur = value;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let Value::Mapping(map) = cur else {
            return Err(Error::Config(format!("`{key}`: `{}` is not a mapping", parts[..i].join("."))));
        };
        let k = Value::String((*part).to_string());
        if i + 1 == parts.len() {
            map.insert(k, new);
            return Ok(());
        }
        cur = map.entry(k).or_insert_with(|| Value::Mapping(Mapping::new()));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_value(value: Value) -> Result<Self> {
        let mut cfg: ExperimentConfig = serde_yaml::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn to_value(&self) -> Result<Value> {
        Ok(serde_yaml::to_value(self)?)
    }

    /// Parses and resolves a single YAML document (no `base:` support).
    pub fn from_yaml(text: &str) -> Result<Self> {
        let value: Value = serde_yaml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if value.get("base").is_some() {
            return Err(Error::Config("`base:` needs a file path; use load_config".into()));
        }
        Self::from_value(value)
    }

    pub fn to_yaml(&self) -> Result<String> {
        Ok(serde_yaml::to_string(self)?)
    }

    pub fn run_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            let variant = self.cafo.as_ref().map(|c| format!("-{:?}", c.variant).to_lowercase()).unwrap_or_default();
            format!("{}{}-{}-{}", self.algorithm, variant, self.dataset.name(), self.architecture.name())
        })
    }

    /// Label for the `algo` results column (CaFo carries its variant).
    pub fn algo_label(&self) -> String {
        match (&self.algorithm, &self.cafo) {
            (Algorithm::Cafo, Some(c)) => format!("cafo-{}", format!("{:?}", c.variant).to_lowercase()),
            (a, _) => a.name().to_string(),
        }
    }

    /// Checks cross-field constraints and writes every implicit default out explicitly.
    pub fn resolve(&mut self) -> Result<()> {
        let algo = self.algorithm;
        let present = match algo {
            Algorithm::Bp => self.bp.is_some(),
            Algorithm::Ff => self.ff.is_some(),
            Algorithm::Cafo => self.cafo.is_some(),
            Algorithm::Mf => self.mf.is_some(),
        };
        if !present {
            return Err(Error::Config(format!("algorithm `{algo}` requires a `{algo}:` section")));
        }
        let mlp = self.architecture.is_mlp();
        match algo {
            Algorithm::Ff | Algorithm::Mf if !mlp => {
                return Err(Error::Config(format!("{algo} needs an MLP architecture, got {}", self.architecture.name())))
            }
            Algorithm::Cafo if mlp => {
                return Err(Error::Config(format!("cafo needs the cnn3 architecture, got {}", self.architecture.name())))
            }
            Algorithm::Ff if self.dataset.is_cifar() => {
                return Err(Error::Config("ff is defined for the 28×28 grayscale datasets only".into()))
            }
            _ => {}
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("`seeds` must list at least one seed".into()));
        }
        let bs = *self.batch_size.get_or_insert(if algo == Algorithm::Ff { 100 } else { 128 });
        if bs == 0 {
            return Err(Error::Config("`batch_size` must be positive".into()));
        }
        let wants_aug = self.dataset.is_cifar()
            && match algo {
                Algorithm::Bp => true,
                Algorithm::Cafo => self.cafo.as_ref().is_some_and(|c| c.variant == CafoVariant::Dfa),
                _ => false,
            };
        self.augment
            .get_or_insert(if wants_aug { AugmentPolicy::cifar() } else { AugmentPolicy::Identity });
        let default_stop = match algo {
            Algorithm::Bp => EarlyStopping {
                metric: Metric::ValAcc,
                mode: Mode::Maximize,
                patience: 10,
                min_delta: 0.0,
            },
            Algorithm::Ff => EarlyStopping {
                metric: Metric::ValAcc,
                mode: Mode::Maximize,
                patience: 20,
                min_delta: 0.01,
            },
            Algorithm::Mf => EarlyStopping {
                metric: Metric::ValLoss,
                mode: Mode::Minimize,
                patience: 3,
                min_delta: 0.0,
            },
            Algorithm::Cafo => EarlyStopping {
                metric: Metric::ValLoss,
                mode: Mode::Minimize,
                patience: self.cafo.as_ref().map_or(0, |c| c.patience),
                min_delta: 0.0,
            },
        };
        let stop = *self.early_stopping.get_or_insert(default_stop);
        if algo != Algorithm::Bp && stop.metric != default_stop.metric {
            return Err(Error::Config(format!("{algo} early stopping monitors {:?}", default_stop.metric)));
        }
        if let Some(c) = &mut self.cafo {
            c.patience = stop.patience;
            let predictor = c.predictor;
            c.block.get_or_insert(predictor);
            c.block_epochs.get_or_insert(c.epochs_per_block);
            c.block_patience.get_or_insert(c.patience);
            c.calibrate_bn.get_or_insert(c.variant == CafoVariant::Rand);
        }
        if let Some(t) = &mut self.tune {
            if let Some(space) = &t.space {
                if space.is_empty() {
                    return Err(Error::Config("`tune.space` is empty".into()));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the resolved config as JSON.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn stop(&self) -> EarlyStopConfig {
        self.early_stopping.expect("resolved").stop_config()
    }

    pub fn bp_config(&self) -> Result<BpConfig> {
        let s = self.bp.as_ref().ok_or_else(|| Error::Config("missing `bp` section".into()))?;
        Ok(BpConfig {
            optimizer: s.optimizer,
            max_epochs: s.max_epochs,
            batch_size: self.batch_size.expect("resolved"),
            early_stop: self.stop(),
            metric: self.early_stopping.expect("resolved").metric,
            augment: self.augment.expect("resolved"),
        })
    }

    pub fn ff_config(&self) -> Result<FfConfig> {
        let s = self.ff.as_ref().ok_or_else(|| Error::Config("missing `ff` section".into()))?;
        Ok(FfConfig {
            optimizer: s.optimizer,
            downstream: s.downstream,
            max_epochs: s.max_epochs,
            batch_size: self.batch_size.expect("resolved"),
            early_stop: self.stop(),
            threshold: s.threshold,
            peer_factor: s.peer_factor,
            peer_momentum: s.peer_momentum,
            normalization: s.normalization,
            embed: s.embed,
            include_first_layer: s.include_first_layer,
            layer_loss_weights: None,
        })
    }

    pub fn cafo_config(&self) -> Result<CafoConfig> {
        let s = self.cafo.as_ref().ok_or_else(|| Error::Config("missing `cafo` section".into()))?;
        let stop = self.stop();
        Ok(CafoConfig {
            variant: s.variant,
            predictor: s.predictor,
            predictor_epochs: s.epochs_per_block,
            predictor_stop: stop,
            block: s.block.unwrap_or(s.predictor),
            block_epochs: s.block_epochs.unwrap_or(s.epochs_per_block),
            block_stop: EarlyStopConfig {
                patience: s.block_patience.unwrap_or(stop.patience),
                ..stop
            },
            batch_size: self.batch_size.expect("resolved"),
            dfa_scale: s.dfa_scale,
            calibrate_bn: s.calibrate_bn.unwrap_or(s.variant == CafoVariant::Rand),
            augment: self.augment.expect("resolved"),
        })
    }

    pub fn mf_config(&self) -> Result<MfConfig> {
        let s = self.mf.as_ref().ok_or_else(|| Error::Config("missing `mf` section".into()))?;
        Ok(MfConfig {
            optimizer: s.optimizer,
            epochs_per_layer: s.epochs_per_layer,
            batch_size: self.batch_size.expect("resolved"),
            early_stop: self.stop(),
            cache_activations: s.cache_activations,
            aggregate: s.aggregate,
        })
    }

    /// Path of the `max_epochs`-like cap of the primary unit, for tuning budgets.
    pub fn epoch_cap_key(&self) -> &'static str {
        match self.algorithm {
            Algorithm::Bp => "bp.max_epochs",
            Algorithm::Ff => "ff.max_epochs",
            Algorithm::Cafo => "cafo.epochs_per_block",
            Algorithm::Mf => "mf.epochs_per_layer",
        }
    }
}

/// Loads a config file with its `base:` chain and resolves defaults.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let value = load_resolved_value(path)?;
    ExperimentConfig::from_value(value).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}
