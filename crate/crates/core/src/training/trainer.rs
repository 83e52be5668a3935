use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::optim::{adam_update, clip_gradients, AdamState, GroupRates};
use super::task::{EvalMetrics, Task};
use super::TrainError;
use crate::cells::{decode_params, encode_params, sequence_backward, CellError, Checkpoint, LossKind, Model, TensorRecord};
use crate::gauss::Split;
use crate::numeric::rng::streams;
use crate::numeric::{GroupKind, ParamSet, RngStream};

pub const DEFAULT_CLIP_NORM: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    /// Bilinear-group rate as a fraction of `base_lr`.
    pub bilinear_lr_ratio: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Global L2 clipping threshold; off when `None`.
    pub clip_norm: Option<f64>,
    pub loss: LossKind,
    pub seed: u64,
    /// Validate every this many epochs (and always after the last).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            bilinear_lr_ratio: 0.5,
            epochs: 35,
            batch_size: 32,
            clip_norm: None,
            loss: LossKind::Mse,
            seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.base_lr >= 0.0) || !self.base_lr.is_finite() {
            return bad("base_lr must be a finite non-negative number");
        }
        if !(self.bilinear_lr_ratio >= 0.0) || !self.bilinear_lr_ratio.is_finite() {
            return bad("bilinear_lr_ratio must be a finite non-negative number");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }

    pub fn rates(&self) -> GroupRates {
        GroupRates::split(self.base_lr, self.bilinear_lr_ratio)
    }
}

/// One optimizer step. Gradient statistics are taken before clipping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub grad_l1_linear: f64,
    pub grad_l1_bilinear: f64,
    pub grad_l1_head: f64,
    pub grad_l1_embed: f64,
    /// `grad_l1_bilinear / grad_l1_linear`; zero without a bilinear group.
    pub ratio: f64,
    pub clipped: bool,
    pub wall_ms: u64,
}

impl TelemetryRecord {
    /// Equality ignoring wall time.
    pub fn same_values(&self, other: &Self) -> bool {
        Self { wall_ms: 0, ..self.clone() } == Self { wall_ms: 0, ..other.clone() }
    }
}

pub fn write_telemetry_csv(records: &[TelemetryRecord], path: &Path, append: bool) -> Result<(), TrainError> {
    let file = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| TrainError::io(path, e))?;
    let fresh = file.metadata().map(|m| m.len() == 0).unwrap_or(true);
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in records {
        w.serialize(r).map_err(|e| TrainError::io(path, e))?;
    }
    if records.is_empty() && fresh {
        w.write_record(TELEMETRY_HEADER).map_err(|e| TrainError::io(path, e))?;
    }
    w.flush().map_err(|e| TrainError::io(path, e))
}

pub fn read_telemetry_csv(path: &Path) -> Result<Vec<TelemetryRecord>, TrainError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| TrainError::io(path, e))?;
    r.deserialize().collect::<Result<_, _>>().map_err(|e| TrainError::io(path, e))
}

pub const TELEMETRY_HEADER: [&str; 10] = [
    "step",
    "epoch",
    "loss",
    "grad_l1_linear",
    "grad_l1_bilinear",
    "grad_l1_head",
    "grad_l1_embed",
    "ratio",
    "clipped",
    "wall_ms",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<EvalMetrics>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Best {
    pub params: ParamSet,
    pub epoch: usize,
    /// Larger is better: validation accuracy, or negated validation loss.
    pub score: f64,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model,
    pub adam: AdamState,
    pub epochs_done: usize,
    pub step: u64,
    pub best: Option<Best>,
    pub history: Vec<EpochRecord>,
    /// Telemetry produced since this state was created or loaded.
    pub telemetry: Vec<TelemetryRecord>,
}

impl TrainState {
    pub fn new(model: Model) -> Self {
        let adam = AdamState::new(&model.params());
        Self {
            model,
            adam,
            epochs_done: 0,
            step: 0,
            best: None,
            history: Vec::new(),
            telemetry: Vec::new(),
        }
    }

    pub fn best_model(&self) -> Model {
        match &self.best {
            Some(b) => Model::from_params(self.model.config, self.model.seed, &b.params).expect("same layout"),
            None => self.model.clone(),
        }
    }

    /// Model checkpoint with optimizer and loop state attached.
    pub fn to_checkpoint(&self, config: &TrainConfig) -> Checkpoint {
        let mut ck = Checkpoint::from_model(&self.model);
        ck.optimizer = Some(json!({
            "kind": "adam",
            "t": self.adam.t,
            "m": encode_params(&self.adam.m),
            "v": encode_params(&self.adam.v),
        }));
        ck.training = Some(json!({
            "config": config,
            "epochs_done": self.epochs_done,
            "step": self.step,
            "history": self.history,
            "best": self.best.as_ref().map(|b| json!({
                "epoch": b.epoch,
                "score": b.score,
                "tensors": encode_params(&b.params),
            })),
        }));
        ck
    }

    /// Restores a state written by [`TrainState::to_checkpoint`]; a plain
    /// model checkpoint starts a fresh optimizer.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, Option<TrainConfig>), TrainError> {
        let model = ck.to_model()?;
        let mut state = TrainState::new(model);
        let parse = |what: &str, v: &serde_json::Value| -> Result<Vec<TensorRecord>, TrainError> {
            serde_json::from_value(v.clone()).map_err(|e| TrainError::Config(format!("checkpoint {what}: {e}")))
        };
        if let Some(opt) = &ck.optimizer {
            state.adam.t = opt["t"].as_u64().ok_or_else(|| TrainError::Config("checkpoint optimizer lacks t".into()))?;
            state.adam.m = decode_params(&parse("m", &opt["m"])?)?;
            state.adam.v = decode_params(&parse("v", &opt["v"])?)?;
            let layout = state.model.params();
            if !layout.same_layout(&state.adam.m) || !layout.same_layout(&state.adam.v) {
                return Err(TrainError::Config("optimizer moments do not match the model layout".into()));
            }
        }
        let mut config = None;
        if let Some(tr) = &ck.training {
            let field = |k: &str| tr.get(k).cloned().unwrap_or(serde_json::Value::Null);
            let de = |k: &str| TrainError::Config(format!("checkpoint training.{k} is malformed"));
            config = serde_json::from_value(field("config")).ok();
            state.epochs_done = serde_json::from_value(field("epochs_done")).map_err(|_| de("epochs_done"))?;
            state.step = serde_json::from_value(field("step")).map_err(|_| de("step"))?;
            state.history = serde_json::from_value(field("history")).map_err(|_| de("history"))?;
            let best = field("best");
            if !best.is_null() {
                state.best = Some(Best {
                    epoch: serde_json::from_value(best["epoch"].clone()).map_err(|_| de("best.epoch"))?,
                    score: best["score"].as_f64().ok_or_else(|| de("best.score"))?,
                    params: decode_params(&parse("best", &best["tensors"])?)?,
                });
            }
        }
        Ok((state, config))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the best validation score.
    pub best_model: Model,
    pub final_model: Model,
    pub best_epoch: usize,
    pub best_val: Option<EvalMetrics>,
    pub test: EvalMetrics,
    pub history: Vec<EpochRecord>,
    pub telemetry: Vec<TelemetryRecord>,
}

fn group_l1(grads: &ParamSet, g: GroupKind) -> f64 {
    grads.group_l1_mean(g).unwrap_or(0.0)
}

/// Runs epochs `state.epochs_done + 1 ..= until_epoch`.
pub fn run_epochs(mut state: TrainState, task: &dyn Task, config: &TrainConfig, until_epoch: usize) -> Result<TrainState, TrainError> {
    config.validate()?;
    if config.loss != task.loss_kind() {
        return Err(TrainError::Config(format!(
            "loss {} does not match the task's {}",
            config.loss.as_str(),
            task.loss_kind().as_str()
        )));
    }
    let n = task.train_len();
    if n == 0 {
        return Err(TrainError::Config("training split is empty".into()));
    }
    let rates = config.rates();
    let groups: Vec<GroupKind> = state.model.layout().into_iter().map(|(_, g, _)| g).collect();
    let start = Instant::now();
    for epoch in state.epochs_done + 1..=until_epoch.min(config.epochs) {
        let mut order: Vec<usize> = (0..n).collect();
        RngStream::new(config.seed, streams::SHUFFLE_BASE + epoch as u64).shuffle(&mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = task.train_batch(chunk);
            let diverged = |loss: f64, state: &TrainState| TrainError::Divergence {
                epoch,
                step: state.step + 1,
                loss,
                last: state.telemetry.last().cloned(),
                telemetry: state.telemetry.clone(),
            };
            let (loss, mut grads) = match sequence_backward(&state.model, &batch, config.loss) {
                Err(CellError::NonFiniteLoss(loss)) => return Err(diverged(loss, &state)),
                other => other?,
            };
            if !grads.global_l2_norm().is_finite() {
                return Err(diverged(loss, &state));
            }
            let linear = group_l1(&grads, GroupKind::Linear);
            let bilinear = group_l1(&grads, GroupKind::Bilinear);
            let head = group_l1(&grads, GroupKind::Head);
            let embed = group_l1(&grads, GroupKind::Embedding);
            let ratio = if grads.count_by_group(GroupKind::Bilinear) == 0 || linear == 0.0 {
                0.0
            } else {
                bilinear / linear
            };
            let clipped = match config.clip_norm {
                Some(c) => clip_gradients(&mut grads, c).1,
                None => false,
            };
            let tensors = state.model.tensors_mut();
            adam_update(groups.iter().copied().zip(tensors), &grads, &mut state.adam, &rates);
            state.step += 1;
            loss_sum += loss * chunk.len() as f64;
            state.telemetry.push(TelemetryRecord {
                step: state.step,
                epoch,
                loss,
                grad_l1_linear: linear,
                grad_l1_bilinear: bilinear,
                grad_l1_head: head,
                grad_l1_embed: embed,
                ratio,
                clipped,
                wall_ms: start.elapsed().as_millis() as u64,
            });
        }
        state.epochs_done = epoch;
        let val = if epoch % config.eval_every == 0 || epoch == config.epochs {
            let metrics = task.evaluate(&state.model, Split::Val)?;
            let score = metrics.score();
            if state.best.as_ref().is_none_or(|b| score > b.score) {
                state.best = Some(Best {
                    params: state.model.params(),
                    epoch,
                    score,
                });
            }
            Some(metrics)
        } else {
            None
        };
        state.history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            val,
        });
    }
    Ok(state)
}

/// Full run: all epochs, best-by-validation selection, final test metrics.
pub fn train(model: Model, task: &dyn Task, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let state = run_epochs(TrainState::new(model), task, config, config.epochs)?;
    finish(state, task)
}

/// Evaluates the best parameters on the test split.
pub fn finish(state: TrainState, task: &dyn Task) -> Result<TrainOutcome, TrainError> {
    let best_model = state.best_model();
    let test = task.evaluate(&best_model, Split::Test)?;
    let best_epoch = state.best.as_ref().map_or(state.epochs_done, |b| b.epoch);
    let best_val = state
        .history
        .iter()
        .find(|h| h.epoch == best_epoch)
        .and_then(|h| h.val.clone());
    Ok(TrainOutcome {
        best_model,
        final_model: state.model,
        best_epoch,
        best_val,
        test,
        history: state.history,
        telemetry: state.telemetry,
    })
}
