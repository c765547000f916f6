//! `hlgt`: train, evaluate, decode and inspect the solver.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "hlgt", version, about = "Heterogeneous line graph transformer for math word problems")]
struct Cli {
    /// Log more (-v info, -vv debug). `RUST_LOG` overrides.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model; writes checkpoints and per-epoch metrics under --out.
    Train(TrainArgs),
    /// Expression, answer and comparison accuracy of a checkpoint.
    Eval(EvalArgs),
    /// Decode every problem of a file to JSONL.
    Solve(SolveArgs),
    /// Dump origin and line graphs (DOT and JSON), optionally with attention.
    Graph(GraphArgs),
    /// Finite-difference check of the full training loss on a tiny fixture.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic corpus.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AblateArg {
    NodeType,
    LineGraph,
    Auxiliary,
}

impl AblateArg {
    fn flag(self) -> &'static str {
        match self {
            AblateArg::NodeType => "node-type",
            AblateArg::LineGraph => "line-graph",
            AblateArg::Auxiliary => "auxiliary",
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// JSON training configuration; unknown keys are rejected.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
    /// Disable a component; repeatable. Added to the config's ablations.
    #[arg(long, value_enum)]
    ablate: Vec<AblateArg>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 5)]
    beam: usize,
    /// Also write metrics and predictions here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Problems to solve, one JSON record per line.
    #[arg(long, alias = "problems")]
    test: PathBuf,
    #[arg(long, default_value_t = 5)]
    beam: usize,
    /// Write `predictions.jsonl` here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GraphArgs {
    #[arg(long, alias = "problems")]
    test: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also dump per-layer attention weights of this model.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Negate the analytic gradient of this parameter (fault injection).
    #[arg(long, value_name = "PARAM")]
    flip_sign: Option<String>,
    /// Also write the report as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Solve(a) => commands::solve(a),
        Command::Graph(a) => commands::graph(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Generate(a) => commands::generate(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
