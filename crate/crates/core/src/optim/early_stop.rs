use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[serde(alias = "max")]
    Maximize,
    #[serde(alias = "min")]
    Minimize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    /// New best: snapshot the model.
    Improved,
    Continue,
    /// Patience exhausted: restore the best snapshot.
    Stop,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStopConfig {
    pub mode: Mode,
    pub patience: usize,
    #[serde(default)]
    pub min_delta: f64,
}

/// Tracks the best value; improvement requires beating it by more than `min_delta`.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    pub cfg: EarlyStopConfig,
    pub best_value: Option<f64>,
    pub best_epoch: usize,
    pub stale: usize,
}

impl EarlyStopper {
    pub fn new(cfg: EarlyStopConfig) -> Self {
        EarlyStopper {
            cfg,
            best_value: None,
            best_epoch: 0,
            stale: 0,
        }
    }

    fn better(&self, value: f64, best: f64) -> bool {
        match self.cfg.mode {
            Mode::Maximize => value - best > self.cfg.min_delta,
            Mode::Minimize => best - value > self.cfg.min_delta,
        }
    }

    pub fn update(&mut self, epoch: usize, value: f64) -> StopDecision {
        let improved = match self.best_value {
            None => !value.is_nan(),
            Some(b) => self.better(value, b),
        };
        if improved {
            self.best_value = Some(value);
            self.best_epoch = epoch;
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.cfg.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}
