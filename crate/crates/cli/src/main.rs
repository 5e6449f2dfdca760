use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod manifest;

#[derive(Debug, Parser)]
#[command(name = "fiqa-opt", version, about = "Optimize, distill and evaluate face image quality scores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Shared {
    /// Seed for every random choice
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Worker threads (results do not depend on it)
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output path; `-` writes the primary output to standard output
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset (embeddings.femb, truth.csv, baseline.csv in --out)
    Synth(commands::SynthArgs),
    /// Rearrange baseline quality scores using mated-pair similarity ranks
    Optimize(commands::OptimizeArgs),
    /// Train an embedding-to-quality regressor on (optimized) labels
    Train(commands::TrainArgs),
    /// Predict quality scores with a trained regressor
    Predict(commands::PredictArgs),
    /// Error-versus-reject curve and its AUC for a quality score file
    Evaluate(commands::EvaluateArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Optimize(a) => commands::optimize(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
