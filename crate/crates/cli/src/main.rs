//! `joint-ood`: generate synthetic corpora, train, and evaluate.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "joint-ood", version, about = "Joint in-domain / out-of-domain utterance classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic train/dev/test corpus and its manifest.
    GenData(GenDataArgs),
    /// Train a model and write its best checkpoint and epoch log.
    Train(TrainArgs),
    /// Tune a decision threshold for a target FAR and report test metrics.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    /// Run file with `key = value` lines; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<String>,
    #[arg(long)]
    pub num_domains: Option<String>,
    #[arg(long)]
    pub train_size: Option<String>,
    #[arg(long)]
    pub dev_size: Option<String>,
    #[arg(long)]
    pub test_size: Option<String>,
    #[arg(long)]
    pub ood_ratio: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Grammar file to use instead of the built-in one.
    #[arg(long)]
    pub grammar: Option<String>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<String>,
    #[arg(long)]
    pub dev: Option<String>,
    #[arg(long)]
    pub out_model: Option<String>,
    /// Epoch log path (default: `<out-model>.log.csv`).
    #[arg(long)]
    pub log: Option<String>,
    /// Pretrained word vectors, one word and its values per line.
    #[arg(long)]
    pub embeddings: Option<String>,
    #[arg(long)]
    pub target_far: Option<String>,
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long, value_parser = ["joint", "separate"])]
    pub mode: Option<String>,
    #[arg(long, value_parser = ["bilstm", "sum", "cnn"])]
    pub encoder: Option<String>,
    #[arg(long, value_parser = ["on", "off"])]
    pub dcw: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub learning_rate: Option<String>,
    #[arg(long)]
    pub clip: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub dropout: Option<String>,
    #[arg(long)]
    pub unk_rate: Option<String>,
    #[arg(long)]
    pub min_count: Option<String>,
    #[arg(long)]
    pub char_emb: Option<String>,
    #[arg(long)]
    pub char_hidden: Option<String>,
    #[arg(long)]
    pub word_emb: Option<String>,
    #[arg(long)]
    pub word_hidden: Option<String>,
    #[arg(long)]
    pub head_hidden: Option<String>,
    #[arg(long)]
    pub cnn_channels: Option<String>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub test: Option<String>,
    /// Target FAR (default: the value the model was trained with).
    #[arg(long)]
    pub target_far: Option<String>,
    /// Split the threshold is tuned on.
    #[arg(long, value_parser = ["dev", "test"])]
    pub tune_on: Option<String>,
    #[arg(long)]
    pub dev: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(commands::Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
