use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::algo::{EpochRecord, PhaseRecord};
use crate::error::{Error, Result};
use crate::profiling::EnergySample;

pub const RESULTS_SCHEMA_VERSION: u32 = 1;

/// Column order of the results CSV.
pub const CSV_COLUMNS: [&str; 12] = [
    "algo",
    "dataset",
    "arch",
    "seed",
    "test_acc",
    "effective_epochs",
    "wall_time_s",
    "energy_wh",
    "co2e_g",
    "peak_mem_mib",
    "f_fwd_gflops",
    "f_bp_update_gflops",
];

/// One CSV line. `seed` is a number for runs and `mean` / `std` for summary rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub algo: String,
    pub dataset: String,
    pub arch: String,
    pub seed: String,
    pub test_acc: f64,
    pub effective_epochs: f64,
    pub wall_time_s: f64,
    pub energy_wh: Option<f64>,
    pub co2e_g: Option<f64>,
    pub peak_mem_mib: Option<f64>,
    pub f_fwd_gflops: f64,
    pub f_bp_update_gflops: f64,
}

impl ResultRow {
    pub fn is_summary(&self) -> bool {
        self.seed == "mean" || self.seed == "std"
    }
}

/// Full record of one seeded run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub algo: String,
    pub dataset: String,
    pub arch: String,
    pub seed: u64,
    pub test_acc: f64,
    pub val_acc: f64,
    pub effective_epochs: usize,
    pub wall_time_s: f64,
    pub energy_wh: Option<f64>,
    pub co2e_g: Option<f64>,
    pub peak_mem_mib: Option<f64>,
    pub f_fwd_gflops: f64,
    pub f_bp_update_gflops: f64,
    pub config_fingerprint: String,
    pub energy_source: String,
    pub energy_samples: Vec<EnergySample>,
    pub phases: Vec<PhaseRecord>,
    pub trace: Vec<EpochRecord>,
    pub aux: BTreeMap<String, f64>,
}

impl RunResult {
    pub fn row(&self) -> ResultRow {
        ResultRow {
            algo: self.algo.clone(),
            dataset: self.dataset.clone(),
            arch: self.arch.clone(),
            seed: self.seed.to_string(),
            test_acc: self.test_acc,
            effective_epochs: self.effective_epochs as f64,
            wall_time_s: self.wall_time_s,
            energy_wh: self.energy_wh,
            co2e_g: self.co2e_g,
            peak_mem_mib: self.peak_mem_mib,
            f_fwd_gflops: self.f_fwd_gflops,
            f_bp_update_gflops: self.f_bp_update_gflops,
        }
    }
}

/// `(mean, sample std)`; the std of a single value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn opt_stats(values: &[Option<f64>]) -> (Option<f64>, Option<f64>) {
    let present: Option<Vec<f64>> = values.iter().copied().collect();
    match present {
        Some(v) if !v.is_empty() => {
            let (m, s) = mean_std(&v);
            (Some(m), Some(s))
        }
        _ => (None, None),
    }
}

/// Mean and std rows over per-seed rows.
pub fn summary_rows(rows: &[ResultRow]) -> Vec<ResultRow> {
    let Some(first) = rows.first() else {
        return Vec::new();
    };
    let col = |f: fn(&ResultRow) -> f64| mean_std(&rows.iter().map(f).collect::<Vec<_>>());
    let ocol = |f: fn(&ResultRow) -> Option<f64>| opt_stats(&rows.iter().map(f).collect::<Vec<_>>());
    let acc = col(|r| r.test_acc);
    let ep = col(|r| r.effective_epochs);
    let wt = col(|r| r.wall_time_s);
    let en = ocol(|r| r.energy_wh);
    let co = ocol(|r| r.co2e_g);
    let mem = ocol(|r| r.peak_mem_mib);
    let fw = col(|r| r.f_fwd_gflops);
    let fb = col(|r| r.f_bp_update_gflops);
    ["mean", "std"]
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let pick = |p: (f64, f64)| if i == 0 { p.0 } else { p.1 };
            let opick = |p: (Option<f64>, Option<f64>)| if i == 0 { p.0 } else { p.1 };
            ResultRow {
                algo: first.algo.clone(),
                dataset: first.dataset.clone(),
                arch: first.arch.clone(),
                seed: label.into(),
                test_acc: pick(acc),
                effective_epochs: pick(ep),
                wall_time_s: pick(wt),
                energy_wh: opick(en),
                co2e_g: opick(co),
                peak_mem_mib: opick(mem),
                f_fwd_gflops: pick(fw),
                f_bp_update_gflops: pick(fb),
            }
        })
        .collect()
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    if rows.is_empty() {
        w.write_record(CSV_COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        return Err(Error::format(path, format!("unexpected results header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

#[derive(Serialize, Deserialize)]
pub struct ResultsFile {
    pub schema_version: u32,
    pub config: serde_json::Value,
    pub runs: Vec<RunResult>,
    pub summary: Vec<ResultRow>,
}

pub fn write_results_json(path: &Path, config: serde_json::Value, runs: &[RunResult]) -> Result<()> {
    let rows: Vec<ResultRow> = runs.iter().map(RunResult::row).collect();
    let file = ResultsFile {
        schema_version: RESULTS_SCHEMA_VERSION,
        config,
        runs: runs.to_vec(),
        summary: summary_rows(&rows),
    };
    let text = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Per-epoch metrics of every run, one line per epoch.
pub fn write_trace_csv(path: &Path, runs: &[RunResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["seed", "phase", "index", "epoch", "train_loss", "val_loss", "val_acc", "elapsed_s"])?;
    for run in runs {
        for rec in &run.trace {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([
                run.seed.to_string(),
                serde_json::to_value(rec.phase)?.as_str().unwrap_or_default().to_string(),
                rec.index.to_string(),
                rec.epoch.to_string(),
                rec.train_loss.to_string(),
                opt(rec.val_loss),
                opt(rec.val_acc),
                rec.elapsed_s.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
