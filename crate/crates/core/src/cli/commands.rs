use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::config::{resolve, ConfigLayer, DataSource, ExperimentConfig, TaskKind};
use super::{AnalyzeArgs, CliError, EvalArgs, GenGaussArgs, GenLogicArgs, GradcheckArgs, HeadArg, ParityArgs, TrainArgs};
use crate::analysis::{activation_ratios, aggregate_by_token, highlight_transcript, write_token_table, ActivationTrace};
use crate::cells::{
    batch_loss, count_params, sequence_backward, solve_parity, Batch, CellKind, Checkpoint, HeadSpec, LossKind, Model, ModelConfig,
    SequenceInput,
};
use crate::gauss::{build_dataset, load_dataset, save_dataset, GaussDataset, GaussTaskSpec, Split};
use crate::logic::{build_logic_dataset, label_counts, load_logic_dataset, save_logic_dataset, LogicDataset, LogicSizes, Token};
use crate::numeric::gradcheck::RELATIVE_ERROR_FLOOR;
use crate::numeric::{compare_gradients, finite_difference_gradient, ParamSet, RngStream, Tensor};
use crate::training::{
    finish, gauss_per_timestep, read_telemetry_csv, run_epochs, write_telemetry_csv, GaussPredictor, GaussTask, LogicTask, Task,
    TrainError, TrainState, Truth,
};

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(|e| data_err(path, e))
}

/// Writes to stdout; a closed pipe is not an error.
fn print_json(value: &impl Serialize) {
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(value).expect("serializable"));
}

pub enum LoadedData {
    Gauss(GaussDataset),
    Logic(LogicDataset),
}

impl LoadedData {
    pub fn task(&self) -> TaskKind {
        match self {
            LoadedData::Gauss(_) => TaskKind::Gauss,
            LoadedData::Logic(_) => TaskKind::Logic,
        }
    }
}

/// SHA-256 over the dataset content, including split assignments.
pub fn dataset_digest(data: &LoadedData) -> String {
    let mut h = Sha256::new();
    match data {
        LoadedData::Gauss(ds) => {
            h.update(b"gauss");
            for v in ds.sigma.data().iter().chain(ds.samples().data()) {
                h.update(v.to_le_bytes());
            }
            for s in ds.splits() {
                h.update([*s as u8]);
            }
        }
        LoadedData::Logic(ds) => {
            h.update(b"logic");
            for split in Split::ALL {
                for e in ds.split(split) {
                    let line = json!([split.as_str(), e.tokens_a(), e.tokens_b(), e.label.index(), e.max_ops]);
                    h.update(line.to_string().as_bytes());
                    h.update(b"\n");
                }
            }
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Logic files start with a JSON header whose format names the task.
fn sniff_task(path: &Path) -> Result<TaskKind, CliError> {
    use std::io::BufRead;
    let file = fs::File::open(path).map_err(|e| data_err(path, e))?;
    let mut first = String::new();
    std::io::BufReader::new(file).read_line(&mut first).map_err(|e| data_err(path, e))?;
    let header: Value = serde_json::from_str(&first).map_err(|e| data_err(path, format!("unreadable header: {e}")))?;
    match header["format"].as_str() {
        Some("bilstm-gauss") => Ok(TaskKind::Gauss),
        Some("bilstm-logic") => Ok(TaskKind::Logic),
        other => Err(data_err(path, format!("unknown dataset format {other:?}"))),
    }
}

fn load_source(source: &DataSource) -> Result<LoadedData, CliError> {
    Ok(match source {
        DataSource::File { path } => match sniff_task(path)? {
            TaskKind::Gauss => LoadedData::Gauss(load_dataset(path)?),
            TaskKind::Logic => LoadedData::Logic(load_logic_dataset(path)?),
        },
        DataSource::Gauss { spec } => LoadedData::Gauss(build_dataset(spec)?),
        DataSource::Logic { seed, sizes } => LoadedData::Logic(build_logic_dataset(*seed, *sizes)),
    })
}

fn gauss_spec_of_file(path: &Path) -> Result<GaussTaskSpec, CliError> {
    match sniff_task(path)? {
        TaskKind::Gauss => Ok(load_dataset(path)?.spec),
        TaskKind::Logic => Err(CliError::Usage(format!("{} holds logic data, not gauss", path.display()))),
    }
}

pub fn gen_gauss(a: &GenGaussArgs) -> Result<(), CliError> {
    let spec = GaussTaskSpec {
        d_x: a.dx,
        d_y: a.dy,
        chunk: a.chunk,
        timesteps: a.timesteps,
        sparsity: a.sparsity,
        n_samples: a.samples,
        seed: a.seed,
    };
    spec.validate()?;
    let ds = build_dataset(&spec)?;
    save_dataset(&ds, &a.out)?;
    let counts: serde_json::Map<String, Value> = Split::ALL.iter().map(|s| (s.as_str().to_string(), ds.indices(*s).len().into())).collect();
    print_json(&json!({
        "tool_version": crate::VERSION,
        "path": a.out,
        "spec": spec,
        "sigma_digest": ds.sigma_digest(),
        "dataset_digest": dataset_digest(&LoadedData::Gauss(ds)),
        "rows": spec.n_samples,
        "splits": counts,
    }));
    Ok(())
}

pub fn gen_logic(a: &GenLogicArgs) -> Result<(), CliError> {
    if a.max_train_ops == 0 && a.train_per_bucket > 0 || a.max_test_ops == 0 && a.test_per_bucket > 0 {
        return Err(CliError::Usage("operator-count buckets start at 1".into()));
    }
    let sizes = LogicSizes {
        train_per_bucket: a.train_per_bucket,
        test_per_bucket: a.test_per_bucket,
        max_train_ops: a.max_train_ops,
        max_test_ops: a.max_test_ops,
    };
    let ds = build_logic_dataset(a.seed, sizes);
    save_logic_dataset(&ds, &a.out)?;
    // reload re-derives every label
    let back = load_logic_dataset(&a.out)?;
    if back != ds {
        return Err(CliError::Data("reloaded dataset differs from the generated one".into()));
    }
    let labels: serde_json::Map<String, Value> = crate::logic::Relation::ALL
        .iter()
        .zip(label_counts(ds.train.iter()))
        .map(|(r, c)| (r.as_str().to_string(), c.into()))
        .collect();
    print_json(&json!({
        "tool_version": crate::VERSION,
        "path": a.out,
        "seed": a.seed,
        "sizes": sizes,
        "counts": {"train": ds.train.len(), "val": ds.val.len(), "test": ds.test.len()},
        "train_labels": labels,
        "dataset_digest": dataset_digest(&LoadedData::Logic(ds)),
        "verified": true,
    }));
    Ok(())
}

pub fn parity(a: &ParityArgs) -> Result<(), CliError> {
    let head = match a.head {
        HeadArg::None => HeadSpec::None,
        HeadArg::Regression => HeadSpec::Regression { out_dim: a.out_dim },
        HeadArg::Classifier => HeadSpec::Classifier {
            vocab: a.vocab,
            embed: a.ref_n,
            classes: a.classes,
        },
        HeadArg::Siamese => HeadSpec::Siamese {
            vocab: a.vocab,
            embed: a.ref_n,
            classes: a.classes,
        },
    };
    let reference = ModelConfig {
        layers: a.layers,
        ..ModelConfig::linear(a.ref_n, a.ref_m, head)
    };
    reference.validate()?;
    let p = solve_parity(&reference, a.c)?;
    if a.json {
        print_json(&json!({
            "tool_version": crate::VERSION,
            "reference": reference,
            "c": a.c,
            "reference_count": p.reference_count,
            "m": p.hidden,
            "bilinear_count": p.count,
            "slack": p.slack,
            "next_step": p.next_step,
            "by_group": count_params(&p.config(&reference, a.c)).by_group,
        }));
    } else {
        let _ = writeln!(
            std::io::stdout(),
            "reference count  {}\nresolved m       {}\nbilinear count   {}\nslack            {}",
            p.reference_count, p.hidden, p.count, p.slack
        );
    }
    Ok(())
}

fn task_for<'a>(data: &'a LoadedData, final_only: bool) -> Box<dyn Task + 'a> {
    match data {
        LoadedData::Gauss(ds) => Box::new(GaussTask::new(ds, final_only)),
        LoadedData::Logic(ds) => Box::new(LogicTask::new(ds)),
    }
}

fn stamp(ck: &mut Checkpoint, cfg: &ExperimentConfig, data_digest: &str) {
    ck.metadata.insert("config_digest".into(), cfg.digest().into());
    ck.metadata.insert("dataset_digest".into(), data_digest.into());
    ck.metadata
        .insert("experiment".into(), serde_json::to_value(cfg).expect("serializable"));
}

fn metadata_str<'a>(ck: &'a Checkpoint, key: &str) -> Option<&'a str> {
    ck.metadata.get(key).and_then(Value::as_str)
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let file = match &a.config {
        Some(p) => ConfigLayer::from_file(p)?,
        None => ConfigLayer::default(),
    };
    let layer = file.overlay(&a.layer);
    let cfg = resolve(&layer, gauss_spec_of_file)?;
    let digest = cfg.digest();
    if let Some(p) = &cfg.parity {
        eprintln!(
            "parity: reference {} params, resolved m = {} ({} params, slack {})",
            p.reference_count, p.hidden, p.count, p.slack
        );
    }
    let data = load_source(&cfg.data)?;
    if data.task() != cfg.task {
        return Err(CliError::Usage("dataset does not match the configured task".into()));
    }
    let data_digest = dataset_digest(&data);
    let task = task_for(&data, cfg.final_only);

    fs::create_dir_all(&cfg.out).map_err(|e| data_err(&cfg.out, e))?;
    let telemetry_path = cfg.out.join("telemetry.csv");
    let state = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if metadata_str(&ck, "config_digest") != Some(digest.as_str()) && !a.force {
                return Err(CliError::Data(format!(
                    "{} was written by a different config (use --force to resume anyway)",
                    path.display()
                )));
            }
            let (state, _) = TrainState::from_checkpoint(&ck)?;
            // keep the telemetry file consistent with the resumed step
            let earlier = if telemetry_path.exists() {
                read_telemetry_csv(&telemetry_path)?
            } else {
                Vec::new()
            };
            let kept: Vec<_> = earlier.into_iter().filter(|r| r.step <= state.step).collect();
            write_telemetry_csv(&kept, &telemetry_path, false)?;
            state
        }
        None => {
            write_telemetry_csv(&[], &telemetry_path, false)?;
            TrainState::new(Model::init(cfg.model, cfg.train.seed)?)
        }
    };
    let until = a.stop_after.unwrap_or(cfg.train.epochs).min(cfg.train.epochs);
    let state = match run_epochs(state, task.as_ref(), &cfg.train, until) {
        Ok(s) => s,
        Err(e) => {
            if let TrainError::Divergence { telemetry, .. } = &e {
                write_telemetry_csv(telemetry, &telemetry_path, true)?;
            }
            return Err(e.into());
        }
    };
    write_telemetry_csv(&state.telemetry, &telemetry_path, true)?;
    let mut ck = state.to_checkpoint(&cfg.train);
    stamp(&mut ck, &cfg, &data_digest);
    ck.save(&cfg.out.join("checkpoint.json"))?;
    if state.epochs_done < cfg.train.epochs {
        eprintln!("stopped after epoch {}; resume with --resume {}", state.epochs_done, cfg.out.join("checkpoint.json").display());
        return Ok(());
    }

    let outcome = finish(state, task.as_ref())?;
    let mut best = Checkpoint::from_model(&outcome.best_model);
    stamp(&mut best, &cfg, &data_digest);
    best.save(&cfg.out.join("best.json"))?;
    let counts = count_params(&cfg.model);
    let summary = json!({
        "tool_version": crate::VERSION,
        "config_digest": digest,
        "dataset_digest": data_digest,
        "experiment": cfg,
        "param_counts": {"total": counts.total, "by_group": counts.by_group},
        "parity": cfg.parity,
        "best_epoch": outcome.best_epoch,
        "best_val": outcome.best_val,
        "test": outcome.test,
        "history": outcome.history,
        "steps": outcome.telemetry.last().map(|r| r.step),
        "best_digest": best.digest,
    });
    write_json(&cfg.out.join("summary.json"), &summary)?;
    print_json(&json!({
        "config_digest": summary["config_digest"],
        "best_epoch": outcome.best_epoch,
        "test": outcome.test,
        "out": cfg.out,
    }));
    Ok(())
}

fn experiment_of(ck: &Checkpoint) -> Option<ExperimentConfig> {
    ck.metadata.get("experiment").and_then(|v| serde_json::from_value(v.clone()).ok())
}

/// Dataset for a checkpoint: `--data` if given, else regenerated from the
/// stored experiment. Refuses a digest mismatch unless forced.
fn data_for_checkpoint(ck: &Checkpoint, data: Option<&PathBuf>, force: bool) -> Result<(LoadedData, String), CliError> {
    let source = match (data, experiment_of(ck)) {
        (Some(p), _) => DataSource::File { path: p.clone() },
        (None, Some(exp)) => exp.data,
        (None, None) => return Err(CliError::Usage("checkpoint carries no experiment config; pass --data".into())),
    };
    let loaded = load_source(&source)?;
    let digest = dataset_digest(&loaded);
    if let Some(expected) = metadata_str(ck, "dataset_digest") {
        if expected != digest && !force {
            return Err(CliError::Data(format!(
                "dataset digest {digest} differs from the checkpoint's {expected} (use --force)"
            )));
        }
    }
    Ok((loaded, digest))
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let split: Split = a.split.into();
    let report = if a.oracle {
        let path = a.data.as_ref().expect("clap requires --data");
        let ds = match sniff_task(path)? {
            TaskKind::Gauss => load_dataset(path)?,
            TaskKind::Logic => return Err(CliError::Usage("--oracle needs Gaussian data".into())),
        };
        let rows = ds.indices(split);
        let per_t = gauss_per_timestep(&ds, &rows, GaussPredictor::Oracle, Truth::Realized)?;
        let residual = (1..=ds.spec.timesteps).map(|t| ds.oracle_residual(t)).collect::<Result<Vec<_>, _>>()?;
        json!({
            "tool_version": crate::VERSION,
            "dataset_digest": dataset_digest(&LoadedData::Gauss(ds)),
            "split": split,
            "predictor": "oracle",
            "rows": rows.len(),
            "per_timestep": per_t,
            "residual_baseline": residual,
        })
    } else {
        let path = a.checkpoint.as_ref().expect("clap requires --checkpoint");
        let ck = Checkpoint::load(path)?;
        let model = ck.to_model()?;
        let (data, digest) = data_for_checkpoint(&ck, a.data.as_ref(), a.force)?;
        let final_only = experiment_of(&ck).is_some_and(|e| e.final_only);
        let metrics = task_for(&data, final_only).evaluate(&model, split)?;
        json!({
            "tool_version": crate::VERSION,
            "config_digest": metadata_str(&ck, "config_digest"),
            "dataset_digest": digest,
            "checkpoint_digest": ck.digest,
            "split": split,
            "metrics": metrics,
        })
    };
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    print_json(&report);
    Ok(())
}

/// One cell-and-head combination of the gradient check.
#[derive(Clone, Debug, Serialize)]
pub struct GradcheckCase {
    pub cell: CellKind,
    pub head: String,
    pub max_relative_error: f64,
    pub worst_tensor: String,
    pub scalars: usize,
}

fn random_tokens(rng: &mut RngStream, len: usize) -> Vec<usize> {
    (0..len).map(|_| rng.below(crate::logic::PAD as u64) as usize).collect()
}

fn gradcheck_batch(head: &HeadSpec, a: &GradcheckArgs, m: usize, rng: &mut RngStream) -> Batch {
    let (b, t) = (a.batch, a.steps);
    let mut draw = |rows: usize, cols: usize| Tensor::from_fn2(rows, cols, |_, _| rng.normal());
    match *head {
        HeadSpec::None | HeadSpec::Regression { .. } => {
            let out = head.out_dim().unwrap_or(m);
            Batch::Regression {
                inputs: (0..t).map(|_| draw(b, a.n)).collect(),
                targets: (0..t).map(|_| draw(b, out)).collect(),
                final_only: false,
            }
        }
        HeadSpec::Classifier { classes, .. } => {
            // ragged lengths exercise the masks
            let sequences = (0..b).map(|i| random_tokens(rng, t.saturating_sub(i % 2).max(1))).collect();
            let labels = (0..b).map(|_| rng.below(classes as u64) as usize).collect();
            Batch::Tokens { sequences, labels }
        }
        HeadSpec::Siamese { classes, .. } => {
            let left = (0..b).map(|i| random_tokens(rng, t.saturating_sub(i % 2).max(1))).collect();
            let right = (0..b).map(|_| random_tokens(rng, t)).collect();
            let labels = (0..b).map(|_| rng.below(classes as u64) as usize).collect();
            Batch::Pairs { left, right, labels }
        }
    }
}

/// Every cell type under every head at the given dimensions.
pub fn gradcheck_suite(a: &GradcheckArgs) -> Result<Vec<GradcheckCase>, CliError> {
    let heads = [
        ("none", HeadSpec::None),
        ("regression", HeadSpec::Regression { out_dim: 3 }),
        (
            "classifier",
            HeadSpec::Classifier {
                vocab: crate::logic::VOCAB_SIZE,
                embed: a.n,
                classes: 7,
            },
        ),
        (
            "siamese",
            HeadSpec::Siamese {
                vocab: crate::logic::VOCAB_SIZE,
                embed: a.n,
                classes: 7,
            },
        ),
    ];
    let mut cases = Vec::new();
    for (k, cell) in [CellKind::Linear, CellKind::Bilinear, CellKind::Shared].into_iter().enumerate() {
        for (j, (name, head)) in heads.iter().enumerate() {
            let cfg = ModelConfig {
                layers: a.layers,
                ..ModelConfig::new(cell, a.n, a.m, if cell == CellKind::Bilinear { a.c } else { 0 }, *head)
            };
            let model = Model::init(cfg, a.seed + (4 * k + j) as u64)?;
            let mut rng = RngStream::new(a.seed, 0x4743_0000 + (4 * k + j) as u64);
            let batch = gradcheck_batch(head, a, a.m, &mut rng);
            let loss = if head.embedding().is_some() {
                LossKind::CrossEntropy
            } else {
                LossKind::Mse
            };
            let (_, analytic) = sequence_backward(&model, &batch, loss)?;
            let numeric = finite_difference_gradient(
                |p: &ParamSet| {
                    let probe = Model::from_params(cfg, model.seed, p).expect("same layout");
                    batch_loss(&probe, &batch, loss).unwrap_or(f64::NAN)
                },
                &model.params(),
                a.h,
            )
            .map_err(|e| CliError::Numeric(e.to_string()))?;
            let report = compare_gradients(&analytic, &numeric, RELATIVE_ERROR_FLOOR).map_err(|e| CliError::Numeric(e.to_string()))?;
            cases.push(GradcheckCase {
                cell,
                head: name.to_string(),
                max_relative_error: report.max_relative_error,
                worst_tensor: report.worst_tensor,
                scalars: report.scalars_checked,
            });
        }
    }
    Ok(cases)
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<(), CliError> {
    let cases = gradcheck_suite(a)?;
    let max = cases.iter().map(|c| c.max_relative_error).fold(0.0, f64::max);
    if a.json {
        print_json(&json!({
            "tool_version": crate::VERSION,
            "dims": {"n": a.n, "m": a.m, "c": a.c, "steps": a.steps, "batch": a.batch, "layers": a.layers},
            "h": a.h,
            "tolerance": a.tol,
            "cases": cases,
            "max_relative_error": max,
        }));
    } else {
        for c in &cases {
            let _ = writeln!(std::io::stdout(), "{:<9} {:<11} {:.3e}  ({} scalars, worst {})", c.cell.as_str(), c.head, c.max_relative_error, c.scalars, c.worst_tensor);
        }
        let _ = writeln!(std::io::stdout(), "max relative error {max:.3e} (tolerance {:.0e})", a.tol);
    }
    if !(max < a.tol) {
        return Err(CliError::Numeric(format!("max relative error {max:.3e} exceeds {:.0e}", a.tol)));
    }
    Ok(())
}

pub fn analyze(a: &AnalyzeArgs) -> Result<(), CliError> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let model = ck.to_model()?;
    let (data, digest) = data_for_checkpoint(&ck, a.data.as_ref(), a.force)?;
    let LoadedData::Logic(ds) = &data else {
        return Err(CliError::Data("activation analysis needs token data (logic task)".into()));
    };
    let examples = ds.split(a.split.into());
    let take = a.limit.unwrap_or(examples.len()).min(examples.len());
    let mut traces: Vec<ActivationTrace> = Vec::with_capacity(2 * take);
    for e in &examples[..take] {
        let (x, y) = (e.tokens_a(), e.tokens_b());
        let input = match model.config.head {
            HeadSpec::Siamese { .. } => SequenceInput::Pair(&x, &y),
            HeadSpec::Classifier { .. } => SequenceInput::Tokens(&x),
            _ => return Err(CliError::Usage("checkpoint has no token head".into())),
        };
        traces.extend(activation_ratios(&model, input, a.reduction.into())?);
    }
    let vocab = Token::vocab();
    let table = aggregate_by_token(&traces, &vocab)?;
    let transcript = highlight_transcript(&traces, &vocab)?;

    let out = a.out.clone().unwrap_or_else(super::config::default_out_dir);
    fs::create_dir_all(&out).map_err(|e| data_err(&out, e))?;
    write_token_table(&table, &out.join("ratios.csv"))?;
    transcript.write_jsonl(&out.join("transcript.jsonl"))?;
    fs::write(out.join("transcript.txt"), transcript.to_text()).map_err(|e| data_err(&out, e))?;
    let report = json!({
        "tool_version": crate::VERSION,
        "config_digest": metadata_str(&ck, "config_digest"),
        "dataset_digest": digest,
        "checkpoint_digest": ck.digest,
        "split": Split::from(a.split),
        "reduction": crate::analysis::Reduction::from(a.reduction),
        "sequences": traces.len(),
        "missing": table.missing,
        "conservation_gap": table.conservation_gap(),
        "thresholds": transcript.thresholds,
        "table": table.rows,
    });
    write_json(&out.join("analysis.json"), &report)?;
    print_json(&report);
    Ok(())
}
