mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use config::ConfigError;

#[derive(Parser)]
#[command(name = "grid", version, about = "Scene-graph task planner: data generation, training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of scenes, instructions and traces.
    Generate(GenerateArgs),
    /// Train the planner on a generated dataset.
    Train(TrainArgs),
    /// Score a planner on a dataset split.
    Eval(EvalArgs),
    /// Score a text-completion planner through the prompt harness.
    Baseline(BaselineArgs),
    /// Run one task step by step on the planner's own predictions.
    Simulate(SimulateArgs),
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    /// Objects (furniture and items) per scene.
    #[arg(long)]
    objects: Option<usize>,
    #[arg(long)]
    tasks: Option<usize>,
}

#[derive(Args, Clone, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Use only the first N training tasks.
    #[arg(long)]
    tasks: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Continue from this checkpoint.
    #[arg(long, alias = "checkpoint")]
    resume: Option<PathBuf>,
    /// Stop (with a resumable checkpoint) after this many iterations.
    #[arg(long)]
    stop_after: Option<usize>,
    #[arg(long, default_value_t = 100)]
    save_every: usize,
    #[arg(long, default_value_t = 10)]
    log_every: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    Grid,
    Oracle,
    Majority,
    Llm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Args, Clone, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "eval")]
    split: Split,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "grid")]
    planner: PlannerKind,
    /// Score each stage on the stored ground-truth graphs (default).
    #[arg(long, conflicts_with = "closed_loop")]
    teacher_forced: bool,
    /// Task success from running the planner on its own predictions.
    #[arg(long)]
    closed_loop: bool,
    /// Use only the first N tasks of the split.
    #[arg(long)]
    tasks: Option<usize>,
}

#[derive(Args, Clone, Debug)]
pub struct BaselineArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "eval")]
    split: Split,
    /// `llm` calls the configured endpoint, `oracle` answers from ground truth.
    #[arg(long, value_enum, default_value = "llm")]
    planner: PlannerKind,
    /// Answer every prompt with this text instead of calling a client.
    #[arg(long)]
    mock: Option<String>,
    #[arg(long)]
    tasks: Option<usize>,
}

#[derive(Args, Clone, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "eval")]
    split: Split,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "grid")]
    planner: PlannerKind,
    /// Task id; defaults to the first task of the split.
    #[arg(long)]
    task: Option<u64>,
    /// Step cap; defaults to twice the ground-truth length plus two.
    #[arg(long)]
    cap: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Baseline(a) => commands::baseline(a),
        Command::Simulate(a) => commands::simulate_cmd(a),
    };
    match result {
        Ok(code) => code,
        Err(e) if e.downcast_ref::<ConfigError>().is_some() => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
