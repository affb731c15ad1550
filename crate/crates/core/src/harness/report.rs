use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::results::{read_results_csv, ResultRow};

/// Alternative-minus-baseline differences for one `(dataset, arch)` pair.
/// Accuracy is in percentage points; the rest are percent of the baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub dataset: String,
    pub arch: String,
    pub baseline_algo: String,
    pub alt_algo: String,
    pub d_acc_pp: f64,
    pub d_time_pct: Option<f64>,
    pub d_energy_pct: Option<f64>,
    pub d_mem_pct: Option<f64>,
}

pub fn relative_pct(alt: f64, base: f64) -> Option<f64> {
    (base != 0.0 && base.is_finite() && alt.is_finite()).then(|| 100.0 * (alt - base) / base)
}

fn opt_pct(alt: Option<f64>, base: Option<f64>) -> Option<f64> {
    relative_pct(alt?, base?)
}

/// Representative row per `(dataset, arch)`: the `mean` summary row when
/// present, otherwise the average of the per-seed rows.
fn representatives(rows: &[ResultRow]) -> BTreeMap<(String, String), ResultRow> {
    let mut groups: BTreeMap<(String, String), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.seed != "std") {
        groups.entry((r.dataset.clone(), r.arch.clone())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(k, g)| {
            if let Some(m) = g.iter().find(|r| r.seed == "mean") {
                return (k, (*m).clone());
            }
            let n = g.len() as f64;
            let avg = |f: fn(&ResultRow) -> f64| g.iter().map(|r| f(r)).sum::<f64>() / n;
            let oavg = |f: fn(&ResultRow) -> Option<f64>| {
                g.iter().map(|r| f(r)).collect::<Option<Vec<f64>>>().map(|v| v.iter().sum::<f64>() / n)
            };
            let row = ResultRow {
                algo: g[0].algo.clone(),
                dataset: k.0.clone(),
                arch: k.1.clone(),
                seed: "mean".into(),
                test_acc: avg(|r| r.test_acc),
                effective_epochs: avg(|r| r.effective_epochs),
                wall_time_s: avg(|r| r.wall_time_s),
                energy_wh: oavg(|r| r.energy_wh),
                co2e_g: oavg(|r| r.co2e_g),
                peak_mem_mib: oavg(|r| r.peak_mem_mib),
                f_fwd_gflops: avg(|r| r.f_fwd_gflops),
                f_bp_update_gflops: avg(|r| r.f_bp_update_gflops),
            };
            (k, row)
        })
        .collect()
}

pub fn compare_report(baseline: &[ResultRow], alternative: &[ResultRow]) -> Result<Vec<DeltaRow>> {
    let base = representatives(baseline);
    let alt = representatives(alternative);
    if alt.is_empty() {
        return Err(Error::Report("alternative results contain no rows".into()));
    }
    alt.into_iter()
        .map(|(key, a)| {
            let b = base
                .get(&key)
                .ok_or_else(|| Error::Report(format!("no baseline row for dataset {} / arch {}", key.0, key.1)))?;
            Ok(DeltaRow {
                dataset: key.0,
                arch: key.1,
                baseline_algo: b.algo.clone(),
                alt_algo: a.algo.clone(),
                d_acc_pp: a.test_acc - b.test_acc,
                d_time_pct: relative_pct(a.wall_time_s, b.wall_time_s),
                d_energy_pct: opt_pct(a.energy_wh, b.energy_wh),
                d_mem_pct: opt_pct(a.peak_mem_mib, b.peak_mem_mib),
            })
        })
        .collect()
}

pub fn compare_report_files(baseline: &Path, alternative: &Path) -> Result<Vec<DeltaRow>> {
    compare_report(&read_results_csv(baseline)?, &read_results_csv(alternative)?)
}

/// Plain-text table of deltas.
pub fn render_report(rows: &[DeltaRow]) -> String {
    let cell = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:+.2}"));
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<14} {:<8} {:<10} {:>9} {:>10} {:>11} {:>9}",
        "dataset", "arch", "alt", "ΔAcc(pp)", "ΔTime(%)", "ΔEnergy(%)", "ΔMem(%)"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<14} {:<8} {:<10} {:>9} {:>10} {:>11} {:>9}",
            r.dataset,
            r.arch,
            r.alt_algo,
            format!("{:+.2}", r.d_acc_pp),
            cell(r.d_time_pct),
            cell(r.d_energy_pct),
            cell(r.d_mem_pct)
        );
    }
    out
}
