//! Experiment configuration: a JSON file of flat keys, overridden by flags.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::CliError;
use crate::cells::{solve_parity, CellKind, HeadSpec, ModelConfig, ParityResult};
use crate::gauss::GaussTaskSpec;
use crate::logic::{LogicSizes, VOCAB_SIZE};
use crate::numeric::GroupKind;
use crate::training::TrainConfig;
use crate::util::sha256_hex;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "BILSTM_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "runs";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Gauss,
    Logic,
}

/// Every settable key. Absent keys fall back to the file, then to defaults.
#[derive(Clone, Debug, Default, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskKind>,
    /// linear, bilinear or shared
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cell: Option<CellKind>,
    /// Dataset file; generated from the spec keys when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,

    /// Hidden size m (ignored when parity_ref_m is set).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    /// Hidden size of the linear reference whose parameter count is matched.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parity_ref_m: Option<usize>,
    /// Pool size c.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool: Option<usize>,
    /// c = ceil(pool_fraction * reference m), used when pool is unset.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool_fraction: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layers: Option<usize>,
    /// Embedding width for the logic task.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embed: Option<usize>,
    /// Optimizer group of the integration maps: bilinear or linear.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub integration_group: Option<GroupKind>,
    /// Supervise only the last timestep (Gaussian task).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_only: Option<bool>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bilinear_lr_ratio: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_every: Option<usize>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_x: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_y: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chunk: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timesteps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sparsity: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    /// Seed of a generated dataset (independent of the training seed).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_per_bucket: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_per_bucket: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_train_ops: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_test_ops: Option<usize>,
}

impl ConfigLayer {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Keys set in `over` replace those in `self`.
    pub fn overlay(self, over: &ConfigLayer) -> Self {
        let mut base = to_map(&self);
        base.extend(to_map(over));
        serde_json::from_value(Value::Object(base)).expect("layer keys round-trip")
    }
}

fn to_map(layer: &ConfigLayer) -> Map<String, Value> {
    match serde_json::to_value(layer).expect("serializable") {
        Value::Object(m) => m,
        _ => unreachable!("struct serializes to an object"),
    }
}

/// Dataset source of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataSource {
    File { path: PathBuf },
    Gauss { spec: GaussTaskSpec },
    Logic { seed: u64, sizes: LogicSizes },
}

/// Fully resolved experiment; its JSON is what the config digest covers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub model: ModelConfig,
    /// Present when `model.hidden` was derived by the parity solver.
    pub parity: Option<ParityResult>,
    pub train: TrainConfig,
    pub final_only: bool,
    pub data: DataSource,
    #[serde(skip)]
    pub out: PathBuf,
}

impl ExperimentConfig {
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("serializable").as_bytes())
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT_DIR), PathBuf::from)
}

/// Input width and head implied by the task and dataset shape.
pub fn task_head(task: TaskKind, gauss: Option<&GaussTaskSpec>, embed: usize) -> (usize, HeadSpec) {
    match task {
        TaskKind::Gauss => {
            let spec = gauss.expect("gauss spec");
            (spec.chunk, HeadSpec::Regression { out_dim: spec.d_y })
        }
        TaskKind::Logic => (
            embed,
            HeadSpec::Siamese {
                vocab: VOCAB_SIZE,
                embed,
                classes: 7,
            },
        ),
    }
}

pub fn resolve(layer: &ConfigLayer, gauss_of_file: impl FnOnce(&Path) -> Result<GaussTaskSpec, CliError>) -> Result<ExperimentConfig, CliError> {
    let task = layer.task.ok_or_else(|| usage("task is required (gauss or logic)"))?;
    let cell = layer.cell.unwrap_or(CellKind::Bilinear);
    let seed = layer.seed.unwrap_or(0);
    let data_seed = layer.data_seed.unwrap_or(0);

    let desk = GaussTaskSpec::desk();
    let data = match (&layer.data, task) {
        (Some(path), _) => DataSource::File { path: path.clone() },
        (None, TaskKind::Gauss) => DataSource::Gauss {
            spec: GaussTaskSpec {
                d_x: layer.d_x.unwrap_or(desk.d_x),
                d_y: layer.d_y.unwrap_or(desk.d_y),
                chunk: layer.chunk.unwrap_or(desk.chunk),
                timesteps: layer.timesteps.unwrap_or(desk.timesteps),
                sparsity: layer.sparsity.unwrap_or(desk.sparsity),
                n_samples: layer.samples.unwrap_or(desk.n_samples),
                seed: data_seed,
            },
        },
        (None, TaskKind::Logic) => {
            let d = LogicSizes::default();
            DataSource::Logic {
                seed: data_seed,
                sizes: LogicSizes {
                    train_per_bucket: layer.train_per_bucket.unwrap_or(d.train_per_bucket),
                    test_per_bucket: layer.test_per_bucket.unwrap_or(d.test_per_bucket),
                    max_train_ops: layer.max_train_ops.unwrap_or(d.max_train_ops),
                    max_test_ops: layer.max_test_ops.unwrap_or(d.max_test_ops),
                },
            }
        }
    };
    let gauss_spec = match (&data, task) {
        (DataSource::Gauss { spec }, _) => {
            spec.validate().map_err(|e| usage(e.to_string()))?;
            Some(*spec)
        }
        (DataSource::File { path }, TaskKind::Gauss) => Some(gauss_of_file(path)?),
        _ => None,
    };
    let embed = layer.embed.unwrap_or(32);
    let (input_dim, head) = task_head(task, gauss_spec.as_ref(), embed);

    let base = ModelConfig {
        cell: CellKind::Linear,
        input_dim,
        hidden: 0,
        pool: 0,
        layers: layer.layers.unwrap_or(1),
        head,
        integration_group: layer.integration_group.unwrap_or(GroupKind::Bilinear),
    };
    let reference_m = layer.parity_ref_m.or(layer.hidden).ok_or_else(|| usage("set hidden or parity_ref_m"))?;
    let pool = match (cell, layer.pool, layer.pool_fraction) {
        (CellKind::Bilinear, Some(c), _) => c,
        (CellKind::Bilinear, None, Some(f)) if f >= 0.0 => (f * reference_m as f64).ceil() as usize,
        (CellKind::Bilinear, None, Some(f)) => return Err(usage(format!("pool_fraction must be non-negative, got {f}"))),
        (CellKind::Bilinear, None, None) => return Err(usage("bilinear cells need pool or pool_fraction")),
        (_, Some(c), _) if c > 0 => return Err(usage(format!("{cell} cells have no pool (pool = {c})"))),
        _ => 0,
    };
    let (hidden, parity) = match (layer.parity_ref_m, cell) {
        (Some(ref_m), CellKind::Bilinear) => {
            let reference = ModelConfig { hidden: ref_m, ..base };
            let p = solve_parity(&reference, pool).map_err(|e| usage(e.to_string()))?;
            (p.hidden, Some(p))
        }
        (Some(ref_m), _) => (ref_m, None),
        (None, _) => (reference_m, None),
    };
    let model = ModelConfig {
        cell,
        hidden,
        pool,
        ..base
    };
    model.validate().map_err(|e| usage(e.to_string()))?;

    let defaults = TrainConfig::default();
    let train = TrainConfig {
        base_lr: layer.base_lr.unwrap_or(defaults.base_lr),
        bilinear_lr_ratio: layer.bilinear_lr_ratio.unwrap_or(defaults.bilinear_lr_ratio),
        epochs: layer.epochs.unwrap_or(defaults.epochs),
        batch_size: layer.batch_size.unwrap_or(defaults.batch_size),
        clip_norm: layer.clip_norm,
        loss: match task {
            TaskKind::Gauss => crate::cells::LossKind::Mse,
            TaskKind::Logic => crate::cells::LossKind::CrossEntropy,
        },
        seed,
        eval_every: layer.eval_every.unwrap_or(defaults.eval_every),
    };
    train.validate().map_err(|e| usage(e.to_string()))?;

    Ok(ExperimentConfig {
        task,
        model,
        parity,
        train,
        final_only: layer.final_only.unwrap_or(false),
        data,
        out: layer.out.clone().unwrap_or_else(default_out_dir),
    })
}
