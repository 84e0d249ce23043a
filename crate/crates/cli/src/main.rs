//! `hit`: command-line front end for hierarchy-aware code models.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hit_core::data::SynthKind;
use hit_core::model::Task;
use hit_core::syntax::{HierarchyMode, Language};

#[derive(Parser, Debug)]
#[command(name = "hit", version, about = "Hierarchy Transformer for source code")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Flat TOML table of model, schedule and probe settings.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Which part of each hierarchy path the model sees.
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, global = true, value_enum)]
    pub task: Option<TaskArg>,
    /// Prints parameter counts of the configured model as JSON.
    #[arg(long, global = true)]
    pub param_report: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Writes tokens and hierarchy paths of programs as JSON lines.
    Extract(ExtractArgs),
    /// Trains a model and writes a checkpoint directory.
    Train(TrainArgs),
    /// Scores a checkpoint on a labelled split.
    Eval(EvalArgs),
    /// Runs a checkpoint over unlabelled programs.
    Predict(PredictArgs),
    /// Trains a bilinear scope probe over frozen encoder outputs.
    Probe(ProbeArgs),
    /// Writes a synthetic JSONL corpus.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Source files, or `.jsonl` files of `{"code": ...}` records.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Language of inputs whose extension does not say.
    #[arg(long)]
    pub language: Option<Language>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSONL dataset.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint directory to create.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch CSV report; defaults to `report.csv` in the checkpoint.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub language: Option<Language>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// JSON report path; stdout if absent.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Per-query JSON lines; defaults to `eval_queries.jsonl` in the checkpoint.
    #[arg(long)]
    pub breakdown: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub beam: usize,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// JSONL of `{"code": ...}` records.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Emit retrieval embeddings instead of labels.
    #[arg(long)]
    pub embed: bool,
    #[arg(long, default_value_t = 1)]
    pub beam: usize,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Scope JSONL corpus; train split fits the probe, the rest scores it.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub pairs_per_program: Option<usize>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 1000)]
    pub size: usize,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeArg {
    Full,
    Global,
    Local,
    None,
}

impl From<ModeArg> for HierarchyMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => HierarchyMode::Full,
            ModeArg::Global => HierarchyMode::Global,
            ModeArg::Local => HierarchyMode::Local,
            ModeArg::None => HierarchyMode::None,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskArg {
    Classify,
    Clone,
    Namegen,
    Scope,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Classify => Task::Classify,
            TaskArg::Clone => Task::Clone,
            TaskArg::Namegen => Task::Namegen,
            TaskArg::Scope => Task::Scope,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitArg {
    Train,
    Valid,
    Test,
    All,
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
