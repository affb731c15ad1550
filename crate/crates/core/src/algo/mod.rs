//! Training algorithms: backpropagation and three local learning rules.

pub mod bp;
pub mod cafo;
mod common;
pub mod ff;
pub mod mf;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use common::{
    accuracy_pct, effective_epochs, evaluate_logits, predict_chunked, DataSplits, EpochRecord, Metric, PhaseKind,
    PhaseRecord, TrainReport, ValStats, EVAL_CHUNK,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Bp,
    Ff,
    Cafo,
    Mf,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Bp => "bp",
            Algorithm::Ff => "ff",
            Algorithm::Cafo => "cafo",
            Algorithm::Mf => "mf",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bp" => Ok(Algorithm::Bp),
            "ff" => Ok(Algorithm::Ff),
            "cafo" => Ok(Algorithm::Cafo),
            "mf" => Ok(Algorithm::Mf),
            other => Err(Error::Config(format!("unknown algorithm `{other}`"))),
        }
    }
}
