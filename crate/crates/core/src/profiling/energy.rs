use std::path::PathBuf;
use std::process::Command;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where instantaneous power readings (Watts) come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum EnergySource {
    /// No meter; energy is reported as unavailable.
    #[default]
    Null,
    /// A text file holding one decimal Watts value, re-read on every sample.
    FilePoll { path: PathBuf },
    /// A command whose stdout is one decimal Watts value.
    Command { program: String, #[serde(default)] args: Vec<String> },
}

impl EnergySource {
    pub fn name(&self) -> &'static str {
        match self {
            EnergySource::Null => "null",
            EnergySource::FilePoll { .. } => "file-poll",
            EnergySource::Command { .. } => "external-command",
        }
    }

    /// One reading in Watts.
    pub fn read_watts(&self) -> Result<f64> {
        let text = match self {
            EnergySource::Null => return Err(Error::Energy("null meter has no readings".into())),
            EnergySource::FilePoll { path } => std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
            EnergySource::Command { program, args } => {
                let out = Command::new(program)
                    .args(args)
                    .output()
                    .map_err(|e| Error::Energy(format!("running `{program}`: {e}")))?;
                if !out.status.success() {
                    return Err(Error::Energy(format!("`{program}` exited with {}", out.status)));
                }
                String::from_utf8_lossy(&out.stdout).into_owned()
            }
        };
        let w: f64 = text
            .trim()
            .parse()
            .map_err(|_| Error::Energy(format!("not a Watts value: {:?}", text.trim())))?;
        if !w.is_finite() || w < 0.0 {
            return Err(Error::Energy(format!("invalid power reading {w}")));
        }
        Ok(w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergySample {
    pub t_s: f64,
    pub watts: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub source: String,
    pub samples: Vec<EnergySample>,
    /// `None` when no meter is configured or too few readings were taken.
    pub energy_wh: Option<f64>,
}

/// Trapezoidal integral of power over time, in Watt-hours.
pub fn integrate_energy(samples: &[EnergySample]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Energy(format!("need at least 2 samples, got {}", samples.len())));
    }
    let mut joules = 0.0;
    for p in samples.windows(2) {
        let dt = p[1].t_s - p[0].t_s;
        if !(dt >= 0.0) {
            return Err(Error::Energy(format!("timestamps out of order at t = {}", p[1].t_s)));
        }
        joules += 0.5 * (p[0].watts + p[1].watts) * dt;
    }
    Ok(joules / 3600.0)
}

/// Background power sampler.
pub struct EnergyMonitor {
    source: EnergySource,
    start: Instant,
    samples: Arc<Mutex<Vec<EnergySample>>>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

fn take_sample(source: &EnergySource, start: Instant, out: &Mutex<Vec<EnergySample>>) {
    match source.read_watts() {
        Ok(watts) => out.lock().expect("sample buffer").push(EnergySample {
            t_s: start.elapsed().as_secs_f64(),
            watts,
        }),
        Err(e) => log::warn!("energy sample skipped: {e}"),
    }
}

impl EnergyMonitor {
    pub fn start(source: EnergySource, interval: Duration) -> Self {
        let start = Instant::now();
        let samples = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let handle = (source != EnergySource::Null).then(|| {
            let (src, buf, flag) = (source.clone(), Arc::clone(&samples), Arc::clone(&stop));
            std::thread::spawn(move || {
                while !flag.load(Ordering::Relaxed) {
                    take_sample(&src, start, &buf);
                    sleep_unless_stopped(interval, &flag);
                }
            })
        });
        EnergyMonitor { source, start, samples, stop, handle }
    }

    /// Joins the sampler, takes a closing reading and integrates.
    pub fn stop(mut self) -> EnergyReport {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
            take_sample(&self.source, self.start, &self.samples);
        }
        let samples = std::mem::take(&mut *self.samples.lock().expect("sample buffer"));
        let energy_wh = match self.source {
            EnergySource::Null => None,
            _ => integrate_energy(&samples).map_err(|e| log::warn!("energy unavailable: {e}")).ok(),
        };
        EnergyReport {
            source: self.source.name().into(),
            samples,
            energy_wh,
        }
    }
}

pub(crate) fn sleep_unless_stopped(total: Duration, flag: &AtomicBool) {
    let step = Duration::from_millis(5);
    let until = Instant::now() + total;
    while !flag.load(Ordering::Relaxed) {
        let now = Instant::now();
        if now >= until {
            break;
        }
        std::thread::sleep(step.min(until - now));
    }
}
