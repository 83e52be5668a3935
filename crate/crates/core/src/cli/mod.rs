//! Command-line surface: data generation, parity, training, evaluation,
//! gradient checks and activation analysis.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::analysis::{AnalysisError, Reduction};
use crate::cells::{CellError, CheckpointError};
use crate::gauss::{GaussError, Split};
use crate::logic::LogicError;
use crate::training::TrainError;

pub use commands::{dataset_digest, gradcheck_suite, GradcheckCase, LoadedData};
pub use config::{resolve, ConfigLayer, DataSource, ExperimentConfig, TaskKind, OUT_DIR_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numeric: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl From<GaussError> for CliError {
    fn from(e: GaussError) -> Self {
        match e {
            GaussError::Spec(_) => CliError::Usage(e.to_string()),
            GaussError::Numeric(_) | GaussError::Generation(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<LogicError> for CliError {
    fn from(e: LogicError) -> Self {
        match e {
            LogicError::Sizes(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CellError> for CliError {
    fn from(e: CellError) -> Self {
        match e {
            CellError::NonFiniteLoss(_) | CellError::Numeric(_) => CliError::Numeric(e.to_string()),
            CellError::Infeasible { .. } | CellError::Config(_) | CellError::Degenerate { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::Divergence { .. } => CliError::Numeric(e.to_string()),
            TrainError::Cell(c) => c.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Cell(c) => c.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "bilstm", version, about = "Linear and bilinear-pool LSTM experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a Gaussian conditional-expectation dataset.
    GenGauss(GenGaussArgs),
    /// Generate a propositional-logic relation dataset.
    GenLogic(GenLogicArgs),
    /// Solve for the bilinear hidden size matching a linear reference.
    Parity(ParityArgs),
    /// Train a model from a config file and flag overrides.
    Train(TrainArgs),
    /// Recompute metrics from a checkpoint.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Bilinear:linear activation ratios per token.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct GenGaussArgs {
    #[arg(long, default_value_t = 120)]
    pub dx: usize,
    #[arg(long, default_value_t = 12)]
    pub dy: usize,
    #[arg(long, default_value_t = 12)]
    pub chunk: usize,
    #[arg(long, default_value_t = 10)]
    pub timesteps: usize,
    #[arg(long, default_value_t = 0.10)]
    pub sparsity: f64,
    #[arg(long, default_value_t = 20_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenLogicArgs {
    #[arg(long, default_value_t = 6667)]
    pub train_per_bucket: usize,
    #[arg(long, default_value_t = 2000)]
    pub test_per_bucket: usize,
    #[arg(long, default_value_t = 6)]
    pub max_train_ops: usize,
    #[arg(long, default_value_t = 12)]
    pub max_test_ops: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum HeadArg {
    None,
    Regression,
    Classifier,
    Siamese,
}

#[derive(Debug, Args)]
pub struct ParityArgs {
    /// Input width of the reference (the embedding width for token heads).
    #[arg(long, default_value_t = 30)]
    pub ref_n: usize,
    #[arg(long)]
    pub ref_m: usize,
    #[arg(long)]
    pub c: usize,
    #[arg(long, value_enum, default_value_t = HeadArg::None)]
    pub head: HeadArg,
    #[arg(long, default_value_t = 1)]
    pub out_dim: usize,
    #[arg(long, default_value_t = 12)]
    pub vocab: usize,
    #[arg(long, default_value_t = 7)]
    pub classes: usize,
    #[arg(long, default_value_t = 1)]
    pub layers: usize,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON file of flat keys; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this epoch; a later run can resume.
    #[arg(long)]
    pub stop_after: Option<usize>,
    /// Accept a resume checkpoint from a different config.
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub layer: ConfigLayer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Dataset file; regenerated from the checkpoint's config when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Evaluate even if the dataset digest differs from the checkpoint's.
    #[arg(long)]
    pub force: bool,
    /// Score the exact conditional mean against realized values (Gaussian data).
    #[arg(long, requires = "data")]
    pub oracle: bool,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    #[arg(long, default_value_t = 7)]
    pub m: usize,
    #[arg(long, default_value_t = 3)]
    pub c: usize,
    #[arg(long = "steps", default_value_t = 4)]
    pub steps: usize,
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    #[arg(long, default_value_t = 1)]
    pub layers: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub h: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReductionArg {
    Mean,
    Sum,
}

impl From<ReductionArg> for Reduction {
    fn from(r: ReductionArg) -> Self {
        match r {
            ReductionArg::Mean => Reduction::Mean,
            ReductionArg::Sum => Reduction::Sum,
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long, value_enum, default_value_t = ReductionArg::Mean)]
    pub reduction: ReductionArg,
    /// Analyze at most this many examples.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenGauss(a) => commands::gen_gauss(&a),
        Command::GenLogic(a) => commands::gen_logic(&a),
        Command::Parity(a) => commands::parity(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Analyze(a) => commands::analyze(&a),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
