//! Optimization: Adam with split learning rates, clipping, the epoch loop,
//! telemetry and evaluation.

mod optim;
mod task;
mod trainer;

use std::path::Path;

use thiserror::Error;

use crate::cells::{CellError, CheckpointError};

pub use optim::{adam_step, adam_update, clip_gradients, AdamState, GroupRates, BETA1, BETA2, EPSILON};
pub use task::{
    gauss_per_timestep, length_stratified_accuracy, per_timestep_error, predict_labels, stratified_accuracy, BucketAccuracy,
    EvalMetrics, GaussPredictor, GaussTask, LogicTask, StratifiedAccuracy, Task, Truth,
};
pub use trainer::{
    finish, read_telemetry_csv, run_epochs, train, write_telemetry_csv, Best, EpochRecord, TelemetryRecord, TrainConfig,
    TrainOutcome, TrainState, DEFAULT_CLIP_NORM, TELEMETRY_HEADER,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}; last telemetry {last:?}")]
    Divergence {
        epoch: usize,
        step: u64,
        loss: f64,
        last: Option<TelemetryRecord>,
        /// Every record produced before the failure.
        telemetry: Vec<TelemetryRecord>,
    },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl TrainError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        TrainError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}
