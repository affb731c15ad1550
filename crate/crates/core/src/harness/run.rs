use std::path::{Path, PathBuf};

use serde_json::json;

use crate::algo::bp::train_bp;
use crate::algo::cafo::{train_cafo, CafoModel};
use crate::algo::ff::{train_ff, FfNetwork};
use crate::algo::mf::{train_mf, MfNetwork};
use crate::algo::{effective_epochs, Algorithm, DataSplits, TrainReport};
use crate::datasets::{load_dataset, split_train_val, DatasetKind};
use crate::error::{Error, Result};
use crate::nn::{build_model, Checkpoint, ModelSpec, StateDict};
use crate::numerics::{RngStream, Scalar, StreamName};
use crate::profiling::{estimate_flops, ResourceMonitor};

use super::config::{ExperimentConfig, Precision};
use super::results::{summary_rows, write_results_csv, write_results_json, write_trace_csv, ResultRow, RunResult};

/// Environment variable overriding the default data directory.
pub const DATA_DIR_ENV: &str = "BPFREE_DATA_DIR";

/// What a trainer hands back for one seed.
pub struct TrainOutcome {
    pub report: TrainReport,
    /// Serialized checkpoint, when requested by the config.
    pub checkpoint: Option<Vec<u8>>,
}

/// Trains one seeded run of a resolved config. The runner times only `train`.
pub trait Trainer {
    /// Loads whatever the runs of `cfg` share (e.g. datasets). Not timed.
    fn prepare(&mut self, _cfg: &ExperimentConfig) -> Result<()> {
        Ok(())
    }

    fn train(&mut self, cfg: &ExperimentConfig, seed: u64) -> Result<TrainOutcome>;
}

impl<F> Trainer for F
where
    F: FnMut(&ExperimentConfig, u64) -> Result<TrainOutcome>,
{
    fn train(&mut self, cfg: &ExperimentConfig, seed: u64) -> Result<TrainOutcome> {
        self(cfg, seed)
    }
}

/// `$BPFREE_DATA_DIR`, or `data` in the working directory.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from("data"), PathBuf::from)
}

pub fn resolve_data_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.data_dir.clone().unwrap_or_else(default_data_dir)
}

/// Loads, splits and normalizes the dataset of `cfg`.
pub fn load_splits<S: Scalar>(cfg: &ExperimentConfig, root: &Path) -> Result<DataSplits<S>> {
    let raw = load_dataset::<S>(cfg.dataset, root)?;
    let (mut train, val) = split_train_val(&raw.train, &cfg.dataset.default_split(cfg.split_seed))?;
    if let Some(n) = cfg.train_subset {
        if n == 0 || n > train.len() {
            return Err(Error::Config(format!(
                "train_subset {n} outside 1..={} for {}",
                train.len(),
                cfg.dataset
            )));
        }
        train = train.head(n);
    }
    Ok(DataSplits {
        train: train.normalized(),
        val: val.normalized(),
        test: raw.test.normalized(),
    })
}

fn descriptor(cfg: &ExperimentConfig, spec: &ModelSpec) -> String {
    json!({
        "algorithm": cfg.algo_label(),
        "dataset": cfg.dataset.name(),
        "arch": cfg.architecture.name(),
        "spec": spec,
    })
    .to_string()
}

fn finish<S: Scalar>(
    cfg: &ExperimentConfig,
    spec: &ModelSpec,
    model: &impl StateDict<S>,
    report: TrainReport,
) -> Result<TrainOutcome> {
    let checkpoint = if cfg.save_checkpoints {
        Some(Checkpoint::capture(descriptor(cfg, spec), model).to_bytes()?)
    } else {
        None
    };
    Ok(TrainOutcome { report, checkpoint })
}

/// Builds the model for `cfg`, seeded by `seed`, and trains it on `data`.
pub fn train_on<S: Scalar>(cfg: &ExperimentConfig, data: &DataSplits<S>, seed: u64) -> Result<TrainOutcome> {
    let meta = &data.train.meta;
    let mut rng = RngStream::new(StreamName::WeightInit, seed);
    let head = cfg.algorithm == Algorithm::Bp;
    let spec = ModelSpec::for_arch(cfg.architecture, meta, head);
    match cfg.algorithm {
        Algorithm::Bp => {
            let model = build_model::<S>(&spec, &mut rng)?;
            let (model, report) = train_bp(model, &cfg.bp_config()?, data, seed)?;
            finish(cfg, &spec, &model, report)
        }
        Algorithm::Ff => {
            let fc = cfg.ff_config()?;
            let hidden = cfg.architecture.hidden().expect("resolved MLP");
            let net = FfNetwork::<S>::new(meta.input_dim(), &hidden, meta.num_classes, fc.threshold, fc.normalization, &mut rng)?;
            let (net, report) = train_ff(net, &fc, data, seed)?;
            finish(cfg, &spec, &net, report)
        }
        Algorithm::Mf => {
            let mc = cfg.mf_config()?;
            let hidden = cfg.architecture.hidden().expect("resolved MLP");
            let bias = cfg.mf.as_ref().is_none_or(|m| m.bias);
            let net = MfNetwork::<S>::new(meta.input_dim(), &hidden, meta.num_classes, bias, &mut rng)?;
            let (net, report) = train_mf(net, &mc, data, seed)?;
            finish(cfg, &spec, &net, report)
        }
        Algorithm::Cafo => {
            let cc = cfg.cafo_config()?;
            let ModelSpec::Cnn(cnn) = spec.clone() else {
                return Err(Error::Config("cafo needs a CNN architecture".into()));
            };
            let model = CafoModel::<S>::new(cnn, cc.variant, &mut rng)?;
            let (model, report) = train_cafo(model, &cc, data, seed)?;
            finish(cfg, &spec, &model, report)
        }
    }
}

enum Loaded {
    F32(DataSplits<f32>),
    F64(DataSplits<f64>),
}

#[derive(PartialEq)]
struct DataKey {
    root: PathBuf,
    dataset: DatasetKind,
    split_seed: u64,
    subset: Option<usize>,
    precision: Precision,
}

/// Trainer backed by the on-disk datasets; keeps the last loaded splits.
#[derive(Default)]
pub struct DatasetTrainer {
    cache: Option<(DataKey, Loaded)>,
}

impl DatasetTrainer {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Trainer for DatasetTrainer {
    fn prepare(&mut self, cfg: &ExperimentConfig) -> Result<()> {
        let key = DataKey {
            root: resolve_data_dir(cfg),
            dataset: cfg.dataset,
            split_seed: cfg.split_seed,
            subset: cfg.train_subset,
            precision: cfg.precision,
        };
        if self.cache.as_ref().is_some_and(|(k, _)| *k == key) {
            return Ok(());
        }
        self.cache = None;
        let loaded = match cfg.precision {
            Precision::F32 => Loaded::F32(load_splits(cfg, &key.root)?),
            Precision::F64 => Loaded::F64(load_splits(cfg, &key.root)?),
        };
        self.cache = Some((key, loaded));
        Ok(())
    }

    fn train(&mut self, cfg: &ExperimentConfig, seed: u64) -> Result<TrainOutcome> {
        if self.cache.is_none() {
            self.prepare(cfg)?;
        }
        match &self.cache.as_ref().expect("prepared").1 {
            Loaded::F32(d) => train_on(cfg, d, seed),
            Loaded::F64(d) => train_on(cfg, d, seed),
        }
    }
}

/// Output directory of a run: `<output_dir>/<run_name>`.
pub fn run_dir(cfg: &ExperimentConfig) -> Option<PathBuf> {
    cfg.output_dir.as_ref().map(|d| d.join(cfg.run_name()))
}

fn write_outputs(dir: &Path, cfg: &ExperimentConfig, runs: &[RunResult]) -> Result<()> {
    let mut rows: Vec<ResultRow> = runs.iter().map(RunResult::row).collect();
    rows.extend(summary_rows(&rows));
    write_results_csv(&dir.join("results.csv"), &rows)?;
    write_results_json(&dir.join("results.json"), serde_json::to_value(cfg)?, runs)?;
    write_trace_csv(&dir.join("trace.csv"), runs)?;
    let yaml = cfg.to_yaml()?;
    let path = dir.join("config.resolved.yaml");
    std::fs::write(&path, yaml).map_err(|e| Error::io(&path, e))
}

/// Runs every seed of `cfg` with the on-disk datasets.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunResult>> {
    run_experiment_with(cfg, &mut DatasetTrainer::new())
}

/// Runs every seed of `cfg` through `trainer`, profiling each training call.
/// Outputs are rewritten after each seed when `output_dir` is set.
pub fn run_experiment_with(cfg: &ExperimentConfig, trainer: &mut dyn Trainer) -> Result<Vec<RunResult>> {
    let mut cfg = cfg.clone();
    cfg.resolve()?;
    let flops = estimate_flops(cfg.algorithm, cfg.architecture, &cfg.dataset.meta())?;
    let fingerprint = cfg.fingerprint();
    let dir = run_dir(&cfg);
    if let Some(d) = &dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    trainer.prepare(&cfg)?;
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        log::info!("{} seed {seed}: training", cfg.run_name());
        let monitor = ResourceMonitor::start(&cfg.profiling)?;
        let outcome = trainer.train(&cfg, seed);
        let (res, energy) = monitor.stop()?;
        let outcome = outcome?;
        let report = outcome.report;
        if let (Some(d), Some(bytes)) = (&dir, &outcome.checkpoint) {
            let path = d.join(format!("seed{seed}.ckpt"));
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        let run = RunResult {
            algo: cfg.algo_label(),
            dataset: cfg.dataset.name().to_string(),
            arch: cfg.architecture.name().to_string(),
            seed,
            test_acc: report.test_acc,
            val_acc: report.val_acc,
            effective_epochs: effective_epochs(cfg.algorithm, &report.phases),
            wall_time_s: res.wall_time_s,
            energy_wh: res.energy_wh,
            co2e_g: res.co2e_g,
            peak_mem_mib: res.peak_memory_mib,
            f_fwd_gflops: flops.f_fwd_gflops,
            f_bp_update_gflops: flops.f_bp_update_gflops,
            config_fingerprint: fingerprint.clone(),
            energy_source: res.energy_source,
            energy_samples: energy.samples,
            phases: report.phases,
            trace: report.trace,
            aux: report.aux,
        };
        log::info!(
            "{} seed {seed}: test_acc {:.2} after {} epochs in {:.1}s",
            cfg.run_name(),
            run.test_acc,
            run.effective_epochs,
            run.wall_time_s
        );
        runs.push(run);
        if let Some(d) = &dir {
            write_outputs(d, &cfg, &runs)?;
        }
    }
    Ok(runs)
}
