//! Experiment configuration, evaluation, trial orchestration and result files.

pub mod config;
mod experiment;
pub mod gradcheck;
pub mod metrics;

pub use config::{ExperimentConfig, ValidationMode, KEYS};
pub use experiment::{
    evaluate, load_collection, prepare_dataset, run_experiment, run_sweep, sha256_hex, AggregateRow,
    ExperimentResult, MetricsRecord, PreparedData, SweepAxis, SweepRow, TrialResult,
};

use crate::diffmath::checkpoint::CheckpointError;
use crate::diffmath::DiffError;
use crate::dive::DiveError;
use crate::graphdata::DataError;

/// Failure of one experiment stage; the exit code identifies the category.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{stage}: data error: {msg}")]
    Data { stage: &'static str, msg: String },
    #[error("{stage}: numeric abort: {msg}")]
    Numeric { stage: &'static str, msg: String },
    #[error("{stage}: {msg}")]
    Failed { stage: &'static str, msg: String },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Data { .. } => 3,
            HarnessError::Numeric { .. } => 4,
            HarnessError::Failed { .. } => 1,
        }
    }

    pub(crate) fn from_dive(stage: &'static str, e: DiveError) -> Self {
        let msg = e.to_string();
        match e {
            DiveError::Data(_) => HarnessError::Data { stage, msg },
            DiveError::NumericAbort { .. } | DiveError::Diff(DiffError::NonFinite { .. }) => {
                HarnessError::Numeric { stage, msg }
            }
            DiveError::Parameter(_) => HarnessError::Config(format!("{stage}: {msg}")),
            _ => HarnessError::Failed { stage, msg },
        }
    }

    pub(crate) fn from_data(stage: &'static str, e: DataError) -> Self {
        HarnessError::Data { stage, msg: e.to_string() }
    }

    pub(crate) fn from_checkpoint(stage: &'static str, e: CheckpointError) -> Self {
        HarnessError::Failed { stage, msg: e.to_string() }
    }

    pub(crate) fn io(stage: &'static str, e: std::io::Error) -> Self {
        HarnessError::Failed { stage, msg: e.to_string() }
    }
}
