//! FLOPs estimates, power integration, memory high-water and CO2e.

mod energy;
mod flops;
mod memory;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use energy::{integrate_energy, EnergyMonitor, EnergyReport, EnergySample, EnergySource};
pub use flops::{estimate_bp_update_flops, estimate_flops, estimate_forward_flops, FlopStage, FlopsReport};
pub use memory::{current_rss_bytes, MemoryMonitor, MIN_SAMPLE_INTERVAL};

/// Grams CO2-equivalent for `energy_wh` at `intensity_g_per_kwh`.
pub fn estimate_co2e(energy_wh: f64, intensity_g_per_kwh: f64) -> Result<f64> {
    if !(intensity_g_per_kwh >= 0.0) || !(energy_wh >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "energy ({energy_wh} Wh) and carbon intensity ({intensity_g_per_kwh} g/kWh) must be non-negative"
        )));
    }
    Ok(energy_wh * intensity_g_per_kwh / 1000.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfilingConfig {
    #[serde(default)]
    pub energy: EnergySource,
    #[serde(default = "default_energy_interval")]
    pub energy_interval_ms: u64,
    #[serde(default = "default_true")]
    pub memory: bool,
    #[serde(default = "default_memory_interval")]
    pub memory_interval_ms: u64,
    /// Grid intensity; CO2e is only reported when this is set.
    #[serde(default)]
    pub carbon_intensity_g_per_kwh: Option<f64>,
}

fn default_energy_interval() -> u64 {
    1000
}
fn default_memory_interval() -> u64 {
    100
}
fn default_true() -> bool {
    true
}

impl Default for ProfilingConfig {
    fn default() -> Self {
        ProfilingConfig {
            energy: EnergySource::Null,
            energy_interval_ms: default_energy_interval(),
            memory: true,
            memory_interval_ms: default_memory_interval(),
            carbon_intensity_g_per_kwh: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceReport {
    pub wall_time_s: f64,
    pub peak_memory_mib: Option<f64>,
    pub energy_wh: Option<f64>,
    pub co2e_g: Option<f64>,
    pub energy_source: String,
}

/// Timing, memory and energy monitors around one training window.
pub struct ResourceMonitor {
    start: Instant,
    energy: EnergyMonitor,
    memory: Option<MemoryMonitor>,
    intensity: Option<f64>,
}

impl ResourceMonitor {
    pub fn start(cfg: &ProfilingConfig) -> Result<Self> {
        let memory = if cfg.memory {
            Some(MemoryMonitor::start(Duration::from_millis(cfg.memory_interval_ms))?)
        } else {
            None
        };
        Ok(ResourceMonitor {
            start: Instant::now(),
            energy: EnergyMonitor::start(cfg.energy.clone(), Duration::from_millis(cfg.energy_interval_ms.max(10))),
            memory,
            intensity: cfg.carbon_intensity_g_per_kwh,
        })
    }

    pub fn stop(self) -> Result<(ResourceReport, EnergyReport)> {
        let wall_time_s = self.start.elapsed().as_secs_f64();
        let peak_memory_mib = self.memory.and_then(MemoryMonitor::stop);
        let energy = self.energy.stop();
        let co2e_g = match (energy.energy_wh, self.intensity) {
            (Some(wh), Some(i)) => Some(estimate_co2e(wh, i)?),
            _ => None,
        };
        Ok((
            ResourceReport {
                wall_time_s,
                peak_memory_mib,
                energy_wh: energy.energy_wh,
                co2e_g,
                energy_source: energy.source.clone(),
            },
            energy,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn co2e_formula() {
        assert_eq!(estimate_co2e(1000.0, 1000.0).unwrap(), 1000.0);
        assert_eq!(estimate_co2e(0.0, 700.0).unwrap(), 0.0);
        assert!(estimate_co2e(1.0, -1.0).is_err());
    }
}
