//! `reflect`: calibration, head training, estimation, grasp simulation and
//! evaluation over a dataset manifest.

mod commands;
mod config;
mod meta;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use reflect_core::error::ErrorClass;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}", path = .0.display(), source = .1)]
    Io(PathBuf, std::io::Error),
    #[error(transparent)]
    Core(#[from] reflect_core::Error),
    /// Some items failed after outputs were written.
    #[error("{summary}")]
    Failures { code: u8, summary: String },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(..) => 3,
            CliError::Failures { code, .. } => *code,
            CliError::Core(e) => match e.class() {
                ErrorClass::Usage => 2,
                ErrorClass::Data => 3,
                ErrorClass::Convergence => 4,
                ErrorClass::Transport => 5,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "reflect",
    version,
    about = "Reflectance estimation and fingertip grasp simulation"
)]
#[command(after_help = "Exit codes: 0 success, 2 usage, 3 data, 4 convergence, 5 transport.")]
pub struct Cli {
    /// Print resolved configuration and progress to stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Run data-parallel loops on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic manifest with sweeps, embeddings and mock replies.
    Demo(DemoArgs),
    /// Fit reflectance per object from distance sweeps.
    Calibrate(CalibrateArgs),
    /// Train a regression head on frozen embeddings.
    TrainHead(TrainArgs),
    /// Produce reflectance predictions with one method.
    Estimate(EstimateArgs),
    /// Run the simulated grasping protocol.
    GraspSim(GraspArgs),
    /// Summarise predictions and grasp results into tables.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct IntrinsicsArgs {
    /// Sensor offset d0 in mm (overrides the manifest).
    #[arg(long, requires = "n")]
    pub d0: Option<f64>,
    /// Sensor decay exponent n (overrides the manifest).
    #[arg(long, requires = "d0")]
    pub n: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub objects: Option<usize>,
    #[arg(long)]
    pub test_objects: Option<usize>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    /// Image views per object.
    #[arg(long)]
    pub views: Option<u32>,
    /// Relative noise of raw sweep readings.
    #[arg(long)]
    pub sweep_noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Path of the new manifest revision.
    #[arg(long)]
    pub out: PathBuf,
    /// Calibration report CSV (default: next to the new manifest).
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub intrinsics: IntrinsicsArgs,
    /// Write the manifest even if some objects fail to calibrate.
    #[arg(long)]
    pub keep_going: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for head.params and loss.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// image_only, text_only, add or concat.
    #[arg(long)]
    pub fusion: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub lr_floor: Option<f64>,
    /// Mini-batch size (default: full batch).
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hidden_units: Option<usize>,
    /// relu or tanh.
    #[arg(long)]
    pub activation: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Return the lowest-loss epoch's parameters.
    #[arg(long)]
    pub keep_best: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Fixed,
    Head,
    Categorical,
    Prompt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitArg {
    Train,
    Test,
    All,
}

impl std::str::FromStr for SplitArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        <Self as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum)]
    pub method: MethodKind,
    /// Predictions CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Identifier written to the method_id column.
    #[arg(long)]
    pub method_id: Option<String>,
    /// Constant estimate for the fixed method.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Head parameter file for the head method.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Objects to estimate: train, test or all.
    #[arg(long)]
    pub split: Option<SplitArg>,
    #[arg(long)]
    pub trials: Option<u32>,
    /// Canned completion replies, replayed per trial in order.
    #[arg(long, num_args = 1..)]
    pub replies: Vec<PathBuf>,
    /// Query a live completion endpoint (needs the `remote` feature).
    #[arg(long)]
    pub remote: bool,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub timeout_s: Option<u64>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Decimal places for example reflectances in the prompt.
    #[arg(long)]
    pub precision: Option<usize>,
    /// Transcript JSON (default: next to the predictions).
    #[arg(long)]
    pub transcripts: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GraspArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Results CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Prediction files; each method found becomes one compared method.
    #[arg(long, num_args = 1..)]
    pub predictions: Vec<PathBuf>,
    /// Constant-estimate methods, e.g. `--fixed 0.5 1.0`.
    #[arg(long, num_args = 1..)]
    pub fixed: Vec<f64>,
    /// Include the ground-truth method.
    #[arg(long)]
    pub ground_truth: bool,
    #[arg(long)]
    pub split: Option<SplitArg>,
    /// Restrict to these object ids.
    #[arg(long, num_args = 1..)]
    pub object_ids: Vec<String>,
    #[command(flatten)]
    pub intrinsics: IntrinsicsArgs,
    #[arg(long)]
    pub repetitions: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Relative sensor noise per trial.
    #[arg(long)]
    pub noise: Option<f64>,
    /// True fingertip-to-object distance in mm.
    #[arg(long)]
    pub standoff: Option<f64>,
    /// Contact force cap in N.
    #[arg(long)]
    pub max_force: Option<f64>,
    /// Clean-grasp tolerance in mm.
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for tables.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, num_args = 1..)]
    pub predictions: Vec<PathBuf>,
    /// Grasp results CSV.
    #[arg(long)]
    pub grasp: Option<PathBuf>,
    /// mann_whitney or welch_t.
    #[arg(long)]
    pub test: Option<String>,
    /// none, bonferroni or holm.
    #[arg(long)]
    pub correction: Option<String>,
    /// population or sample.
    #[arg(long)]
    pub std: Option<String>,
    /// Mark best (`__**x**__`) and second-best (`__x__`) cells.
    #[arg(long)]
    pub markup: bool,
    /// Pre-training label per method, `METHOD=LABEL`.
    #[arg(long, num_args = 1..)]
    pub pretraining: Vec<String>,
    /// Backbone label for the fusion table.
    #[arg(long, default_value = "frozen encoder")]
    pub backbone: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
