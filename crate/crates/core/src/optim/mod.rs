//! Optimizers and early stopping.

mod early_stop;
mod optimizer;

pub use early_stop::{EarlyStopConfig, EarlyStopper, Mode, StopDecision};
pub use optimizer::{adam_step, adamw_step, sgd_step, OptimConfig, Optimizer, OptimizerKind};
