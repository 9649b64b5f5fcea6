//! `gem`: generate the synthetic dataset, train, evaluate and predict.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gem_core::GemError;

#[derive(Parser, Debug)]
#[command(name = "gem", version, about = "Context-aware gaze estimation with graph-matching supervision")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic two-blob dataset (graymaps + manifest.jsonl).
    GenData(GenDataArgs),
    /// Train a model and keep the checkpoint with the best val PCK@0.2.
    Train(TrainArgs),
    /// Print metrics of a checkpoint on one split as JSON.
    Eval(EvalArgs),
    /// Predict gaze points for one image and query.
    Predict(PredictArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub train: usize,
    #[arg(long, default_value_t = 200)]
    pub val: usize,
    #[arg(long, default_value_t = 200)]
    pub test: usize,
    /// Defaults to $GEM_SEED, then to the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Config JSON supplying image size, point and token counts.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Config JSON; omitted keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch JSON-lines log (default: `<out>.log.jsonl`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Train without the graph-matching loss (β = 0).
    #[arg(long)]
    pub no_vbmatch: bool,
    /// Use element-wise-addition fusion instead of the context-aware module.
    #[arg(long)]
    pub baseline_fusion: bool,
    /// Replace the text features with zeros.
    #[arg(long)]
    pub text_blind: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Config JSON that the checkpoint must match architecturally.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Binary graymap of the configured size.
    #[arg(long)]
    pub image: PathBuf,
    /// Comma-separated token ids, e.g. `1,4,2,0`.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub tokens: Vec<usize>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Binary pixmap overlay output.
    #[arg(long)]
    pub overlay: PathBuf,
    /// Ground-truth points as JSON, e.g. `[[0.5,0.5],[0.6,0.4]]`.
    #[arg(long)]
    pub gt: Option<String>,
}

fn exit_code(err: &GemError) -> u8 {
    match err {
        GemError::NonFinite(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Predict(a) => commands::predict(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
