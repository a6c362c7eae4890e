//! `rankloss`: generate synthetic graded data, train bi-encoders with any of
//! the ranking objectives, evaluate nDCG, and run the controlled sweeps.
//!
//! Exit status is 0 on success, 2 for invalid input or configuration, and 1
//! for internal failures.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::parse_assignment;

#[derive(Parser)]
#[command(name = "rankloss", version, about = "Graded-relevance bi-encoder training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus, queries, training records and qrels.
    Synth(SynthArgs),
    /// Train an encoder and write a checkpoint.
    Train(TrainArgs),
    /// Retrieve with a checkpoint and score nDCG@k.
    Eval(EvalArgs),
    /// Run one of the controlled sweeps and write its CSV.
    Sweep(SweepArgs),
}

fn parse_set(s: &str) -> Result<(String, String), String> {
    parse_assignment(s).map_err(|e| e.to_string())
}

#[derive(Args)]
pub struct SynthArgs {
    /// Flat key = value file with generator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` setting; may repeat.
    #[arg(long, value_parser = parse_set)]
    pub set: Vec<(String, String)>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub topics: Option<usize>,
    #[arg(long)]
    pub hard_negs: Option<usize>,
    /// Comma-separated relevance levels, e.g. `0,0.5,1`.
    #[arg(long)]
    pub levels: Option<String>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_set)]
    pub set: Vec<(String, String)>,
    /// infonce, bixse, soft_infonce, margin_mse, pairwise_bce, lambda_ndcg1, lambda_ndcg2
    #[arg(long)]
    pub loss: Option<String>,
    /// Records JSONL, or a directory written by `synth`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub hard_negs: Option<usize>,
    /// Base learning rate at batch 16 (default 0.01).
    #[arg(long)]
    pub lr: Option<f64>,
    /// Multiplier on the learning rate for the logit bias (default 100).
    #[arg(long)]
    pub beta_lr_mult: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep the epoch with the best validation nDCG@10, using the
    /// validation queries stored next to the records.
    #[arg(long)]
    pub validate: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Directory for the run file and manifest.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// CSV to append the metrics row to (default `<out>/metrics.csv`).
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long, default_value = "rankloss")]
    pub tag: String,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    Noise,
    Cutoff,
    Batchgrid,
    Biaslr,
    Gradcheck,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Noise => "noise",
            SweepKind::Cutoff => "cutoff",
            SweepKind::Batchgrid => "batchgrid",
            SweepKind::Biaslr => "biaslr",
            SweepKind::Gradcheck => "gradcheck",
        }
    }
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub kind: SweepKind,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sweep setting such as `seeds=3` or `synth.queries=4000`; may repeat.
    #[arg(long, value_parser = parse_set)]
    pub set: Vec<(String, String)>,
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Comma-separated grid, e.g. `0,0.25,0.5` or `15x16,0x256` for batchgrid.
    #[arg(long)]
    pub grid: Option<String>,
    /// Comma-separated losses for batchgrid.
    #[arg(long)]
    pub losses: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Eval(a) => commands::eval_cmd(a),
        Command::Sweep(a) => commands::sweep_cmd(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 2 } else { 1 })
        }
    }
}
