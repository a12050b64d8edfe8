mod commands;
mod gradcheck;
mod setup;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nse_core::train::Precision;

/// Train, evaluate and inspect NSE memory encoders.
#[derive(Parser, Debug)]
#[command(name = "nse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model from a run configuration.
    Train(TrainArgs),
    /// Evaluate a checkpoint and print its metrics.
    Eval(EvalArgs),
    /// Encode a sentence and write its key-vector trace, association graph
    /// and memory table.
    Trace(TraceArgs),
    /// Greedy-decode source sentences with a sequence-to-sequence checkpoint.
    Translate(TranslateArgs),
    /// Run the 64-bit finite-difference suite over the encoder and every head.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic dataset as TSV.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory for metrics, checkpoints, config and vocabulary.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Overrides `seed` in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_precision)]
    precision: Option<Precision>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// A checkpoint file or the run directory holding `model.ckpt`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// TSV to evaluate (default: the run's dev data, else its train data).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory for `eval.txt` (and `traces.txt` with --trace).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record a key-vector trace for every example.
    #[arg(long, requires = "out")]
    trace: bool,
    #[arg(long, value_parser = parse_precision)]
    precision: Option<Precision>,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("model").required(true).args(["checkpoint", "config"]))]
struct TraceArgs {
    /// Trained model to trace.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Configuration for a freshly initialized model.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Whitespace-tokenized input sentence.
    #[arg(long)]
    text: String,
    #[arg(long, default_value = "trace")]
    out: PathBuf,
    /// Init seed for a fresh model (with --config).
    #[arg(long)]
    seed: Option<u64>,
    /// Link a token that addresses its own slot to its second-best slot.
    #[arg(long)]
    self_mask: bool,
    #[arg(long, value_parser = parse_precision)]
    precision: Option<Precision>,
}

#[derive(Args, Debug)]
struct TranslateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// One source sentence per line; with tabs, the last field is the source.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Maximum output length (default: twice the source length plus two).
    #[arg(long)]
    max_len: Option<usize>,
    /// Also write the encoder traces to `<out>.trace`.
    #[arg(long)]
    trace: bool,
    #[arg(long, value_parser = parse_precision)]
    precision: Option<Precision>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Optional sizes: `dim`, `slots`, `steps`, `eps`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// First init seed tried for each model.
    #[arg(long, default_value_t = 11)]
    seed: u64,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// copy, reverse, associative-recall or toy-entailment.
    task: String,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    vocab: Option<usize>,
    /// Minimum length (key-value pairs for associative recall).
    #[arg(long)]
    min_len: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    s.parse().map_err(|e: nse_core::Error| e.to_string())
}

/// A problem with how the command was invoked rather than with its inputs.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(a).map(|()| ExitCode::SUCCESS),
        Command::Eval(a) => commands::eval(a).map(|()| ExitCode::SUCCESS),
        Command::Trace(a) => commands::trace(a).map(|()| ExitCode::SUCCESS),
        Command::Translate(a) => commands::translate(a).map(|()| ExitCode::SUCCESS),
        Command::Gradcheck(a) => gradcheck::run(a),
        Command::Synth(a) => commands::synth(a).map(|()| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) if e.is::<Usage>() => {
            eprintln!("usage error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
