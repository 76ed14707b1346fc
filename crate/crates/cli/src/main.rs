//! `rse`: generate synthetic corpora, train and evaluate taggers, run the
//! ablation grid and the split-layer benchmark.
//!
//! Exit codes: 0 success, 1 internal error (or an unmet `--expect-order`),
//! 2 usage, config or input error.

mod commands;
mod config;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rse_core::rse::Task;

#[derive(Parser)]
#[command(name = "rse", version, about = "Relational structure extraction by priming a sequence tagger")]
struct Cli {
    /// Directory receiving one JSON manifest per run.
    #[arg(long, global = true, default_value = "runs")]
    runs: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic train/dev/test corpus and its schema.
    Generate(GenerateArgs),
    /// Train a model from a TOML run config and save a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Write predictions for a corpus as JSON lines.
    Predict(PredictArgs),
    /// Train several ablation cases over several seeds and compare strict F1.
    Ablate(AblateArgs),
    /// Time split-encoder inference for several split layers.
    Bench(BenchArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Output directory for schema.json, train.jsonl, dev.jsonl and test.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with generator settings; flags below override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub relations: Option<usize>,
    #[arg(long)]
    pub cue_strength: Option<f64>,
    #[arg(long)]
    pub ambiguity: Option<f64>,
    #[arg(long)]
    pub multi_relation: Option<f64>,
    #[arg(long, default_value_t = 2000)]
    pub train: usize,
    #[arg(long, default_value_t = 0)]
    pub dev: usize,
    #[arg(long, default_value_t = 500)]
    pub test: usize,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Suppress per-epoch losses.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "event_argument")]
    pub task: Task,
    /// Split layer; defaults to the one stored in the checkpoint.
    #[arg(long)]
    pub split: Option<usize>,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub split: Option<usize>,
}

#[derive(Args)]
pub struct AblateArgs {
    /// Run config; its `case` and `seed` are overridden per run.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1u8, 2, 4, 7])]
    pub cases: Vec<u8>,
    /// Number of seeds, counted up from the config's seed.
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    /// Cases from strongest to weakest; the run fails unless mean F1 follows it.
    #[arg(long, value_delimiter = ',')]
    pub expect_order: Option<Vec<u8>>,
    /// Minimum F1 points between the first and last case of `--expect-order`.
    #[arg(long, default_value_t = 0.0)]
    pub min_gap: f64,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "event_argument")]
    pub task: Task,
    /// Split layers; defaults to every layer from 0 to L.
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    #[arg(long, default_value_t = rse_core::experiment::DEFAULT_REPETITIONS)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

/// A failure caused by the caller's input rather than by this program.
#[derive(Debug)]
pub struct UserError(pub String);

impl fmt::Display for UserError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    use rse_core::Error as E;
    for cause in err.chain() {
        if cause.is::<UserError>() || cause.is::<std::io::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::EmptySequence | E::InvalidGoldPath { .. } | E::TagScheme(_) => 1,
                _ => 2,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(a, &cli.runs),
        Command::Train(a) => commands::train(a, &cli.runs),
        Command::Eval(a) => commands::eval(a, &cli.runs),
        Command::Predict(a) => commands::predict(a, &cli.runs),
        Command::Ablate(a) => commands::ablate(a, &cli.runs),
        Command::Bench(a) => commands::bench(a, &cli.runs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
