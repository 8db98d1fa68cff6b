//! `vroc`: vocabulary building, pretraining, co-training, baseline training,
//! evaluation, prediction and gradient self-check from the command line.
//!
//! Exit status: 0 on success, 1 on data or configuration errors, 2 on usage
//! errors, 3 when a requested check (`--assert-min-macro-f1`, `gradcheck`)
//! fails.

mod commands;
mod manifest;
mod model;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use vroc_core::labels::Task;

#[derive(Debug, Parser)]
#[command(name = "vroc", version, about = "Rumor classification with a co-trained text VAE")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a vocabulary from a dataset.
    BuildVocab(BuildVocabArgs),
    /// Pretrain the VAE on all tweets of a dataset.
    Pretrain(PretrainArgs),
    /// Pretrain, co-train and evaluate under a protocol.
    Cotrain(CotrainArgs),
    /// Same as `cotrain --frozen`: heads on a frozen pretrained VAE.
    TrainBaseline(TrainArgs),
    /// Evaluate a saved model on a labelled dataset.
    Evaluate(EvaluateArgs),
    /// Classify one tweet with a saved model.
    Predict(PredictArgs),
    /// Finite-difference check of every differentiable component.
    Gradcheck(GradcheckArgs),
    /// Convert a PHEME directory tree to JSONL.
    ConvertPheme(ConvertArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct BuildVocabArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    min_freq: Option<usize>,
}

#[derive(Debug, Args)]
struct PretrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProtocolArg {
    Holdout,
    Loo,
    LooAll,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("tasks").required(true).args(["task", "all_tasks"])))]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    task: Option<Task>,
    /// Train one set per task, sharing splits and the pretrained VAE.
    #[arg(long)]
    all_tasks: bool,
    #[arg(long, value_enum, default_value = "holdout")]
    protocol: ProtocolArg,
    /// Event held out by `--protocol loo`.
    #[arg(long)]
    held_out_event: Option<String>,
    /// Task-loss weight for the trained task(s).
    #[arg(long, value_parser = positive_f64)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    /// Exit with status 3 if any task's macro-F1 falls below this.
    #[arg(long, value_parser = unit_f64)]
    assert_min_macro_f1: Option<f64>,
}

#[derive(Debug, Args)]
struct CotrainArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Keep the pretrained VAE fixed and train only the heads.
    #[arg(long)]
    frozen: bool,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Model directory, or a fold directory holding one per task.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = unit_f64)]
    assert_min_macro_f1: Option<f64>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    text: String,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Random instances per case.
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConvertArgs {
    /// Root of the PHEME tree.
    #[arg(long)]
    pheme: PathBuf,
    /// Output JSONL file.
    #[arg(long)]
    out: PathBuf,
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err(format!("expected a finite positive number, got {s:?}")),
    }
}

fn unit_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if (0.0..=1.0).contains(&v) => Ok(v),
        _ => Err(format!("expected a number in [0, 1], got {s:?}")),
    }
}

/// Why a command failed, mapped to the exit status.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
    Check(String),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Data(e.into())
    }
}

fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("VROC_THREADS") else {
        return Ok(());
    };
    match v.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            if !vroc_core::par::init_threads(n) {
                log::debug!("VROC_THREADS={n} not applied");
            }
            Ok(())
        }
        _ => Err(Failure::Usage(format!("VROC_THREADS must be a positive integer, got {v:?}"))),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    init_threads()?;
    match cli.command {
        Command::BuildVocab(a) => commands::build_vocab(&a),
        Command::Pretrain(a) => commands::pretrain(&a),
        Command::Cotrain(a) => commands::train(&a.train, a.frozen, "cotrain"),
        Command::TrainBaseline(a) => commands::train(&a, true, "train-baseline"),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::ConvertPheme(a) => commands::convert(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(3)
        }
    }
}
