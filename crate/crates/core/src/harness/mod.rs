//! Experiment configs, runs, results files, comparison reports and tuning.

mod config;
mod report;
mod results;
mod run;
mod tune;

pub use config::{
    load_config, load_resolved_value, merge_values, set_dotted, BpSection, CafoSection, Distribution, EarlyStopping,
    ExperimentConfig, FfSection, MfSection, ParamRange, Precision, TuneSection,
};
pub use report::{compare_report, compare_report_files, relative_pct, render_report, DeltaRow};
pub use results::{
    mean_std, read_results_csv, summary_rows, write_results_csv, write_results_json, write_trace_csv, ResultRow,
    ResultsFile, RunResult, CSV_COLUMNS, RESULTS_SCHEMA_VERSION,
};
pub use run::{
    default_data_dir, load_splits, resolve_data_dir, run_dir, run_experiment, run_experiment_with, train_on, DatasetTrainer,
    TrainOutcome, Trainer, DATA_DIR_ENV,
};
pub use tune::{default_space, random_search_tune, sample, Trial, TuneResult};

/// CSV of comparison deltas.
pub fn write_report_csv(path: &std::path::Path, rows: &[DeltaRow]) -> crate::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| crate::Error::Io {
        path: path.into(),
        source: e,
    })
}
