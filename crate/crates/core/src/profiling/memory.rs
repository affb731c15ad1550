use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crate::error::{Error, Result};

use super::energy::sleep_unless_stopped;

pub const MIN_SAMPLE_INTERVAL: Duration = Duration::from_millis(10);

/// Current resident set size in bytes, if the platform exposes it.
pub fn current_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmRSS:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Samples process RSS on a background thread and keeps the maximum.
pub struct MemoryMonitor {
    peak: Arc<AtomicU64>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
    available: bool,
}

impl MemoryMonitor {
    pub fn start(interval: Duration) -> Result<Self> {
        if interval < MIN_SAMPLE_INTERVAL {
            return Err(Error::InvalidArgument(format!(
                "memory sampling interval must be at least {} ms",
                MIN_SAMPLE_INTERVAL.as_millis()
            )));
        }
        let first = current_rss_bytes();
        let peak = Arc::new(AtomicU64::new(first.unwrap_or(0)));
        let stop = Arc::new(AtomicBool::new(false));
        let handle = first.is_some().then(|| {
            let (p, flag) = (Arc::clone(&peak), Arc::clone(&stop));
            std::thread::spawn(move || {
                while !flag.load(Ordering::Relaxed) {
                    if let Some(v) = current_rss_bytes() {
                        p.fetch_max(v, Ordering::Relaxed);
                    }
                    sleep_unless_stopped(interval, &flag);
                }
            })
        });
        Ok(MemoryMonitor {
            peak,
            stop,
            handle,
            available: first.is_some(),
        })
    }

    /// Peak RSS so far, in MiB.
    pub fn peak_mib(&self) -> Option<f64> {
        self.available.then(|| self.peak.load(Ordering::Relaxed) as f64 / (1024.0 * 1024.0))
    }

    /// Joins the sampler; `None` if memory introspection is unavailable.
    pub fn stop(mut self) -> Option<f64> {
        if let Some(v) = current_rss_bytes() {
            self.peak.fetch_max(v, Ordering::Relaxed);
        }
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
        self.peak_mib()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn too_fast_interval_is_rejected() {
        assert!(MemoryMonitor::start(Duration::from_millis(1)).is_err());
    }
}
