//! LSTM cells (linear, bilinear-pooled, shared-weight), model stacks,
//! batched backpropagation, parameter parity and checkpoints.

mod backward;
pub mod checkpoint;
mod head;
mod model;
mod params;
mod parity;
mod step;

use thiserror::Error;

use crate::numeric::NumericError;

pub use backward::{batch_loss, predict, sequence_backward, Batch, LossKind};
pub use checkpoint::{decode_params, encode_params, Checkpoint, CheckpointError, TensorRecord, FORMAT_VERSION};
pub use head::{HeadParams, HeadSpec};
pub use model::{ForwardOutput, Model, ModelConfig, SequenceInput, SequenceTrace, MAX_LAYERS};
pub use params::{
    BilinearLstmParams, BilinearPoolParams, CellKind, CellParams, Gate, GateParams, LinearLstmParams,
    SharedWeightParams, FORGET_BIAS_INIT, INTEGRATION_INIT_GAIN,
};
pub use parity::{count_params, solve_parity, ParamCount, ParityResult};
pub use step::{
    bilinear_lstm_step, bilinear_pool, lstm_step, naive_per_neuron_bilinear, shared_weight_bilinear_step, StepTrace,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CellError {
    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    Shape {
        what: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("degenerate dimensions: n = {n}, m = {m} (both must be positive)")]
    Degenerate { n: usize, m: usize },
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
    #[error("token id {token} outside vocabulary of size {vocab}")]
    Token { token: usize, vocab: usize },
    #[error("label {label} outside {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("empty sequence")]
    EmptySequence,
    #[error("empty batch")]
    EmptyBatch,
    #[error("loss '{0}' does not apply to a {1} head")]
    LossKind(&'static str, &'static str),
    #[error("non-finite loss {0}")]
    NonFiniteLoss(f64),
    #[error("no hidden size fits: pool {pool} needs at least {minimum} parameters, budget is {budget}")]
    Infeasible { pool: usize, budget: u128, minimum: u128 },
}
