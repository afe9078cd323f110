//! `fsr`: prepare few-label splits, self-train, evaluate, run loss ablations
//! and export learning curves.
//!
//! Exit codes: 0 on success, 1 for user or configuration errors, 2 for
//! internal failures (numerical blow-ups, panics).

mod commands;
mod config;
mod logging;
mod split;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "fsr", version, about = "Few-label self-training of joint task and rationale models")]
pub struct Cli {
    /// Random seed. Commands without randomness accept and ignore it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for parallel sections; 1 gives a single-worker run.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split an annotated corpus into labeled, unlabeled and validation files.
    Prepare(PrepareArgs),
    /// Self-train a model and write a run directory.
    Train(TrainArgs),
    /// Score a checkpoint on an annotated corpus.
    Eval(EvalArgs),
    /// Train one model per loss-component subset and tabulate the results.
    Ablate(AblateArgs),
    /// Write per-iteration task F1 and rationale percentage series of a run.
    ExportCurves(ExportArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Generate a planted-phrase corpus; optional TOML file with generator
    /// settings (defaults otherwise).
    #[arg(long, value_name = "FILE", num_args = 0..=1, default_missing_value = "",
          conflicts_with_all = ["corpus", "eraser"])]
    pub synthetic: Option<String>,
    /// Line-delimited JSON corpus.
    #[arg(long, value_name = "FILE", conflicts_with = "eraser")]
    pub corpus: Option<PathBuf>,
    /// ERASER-style dataset directory.
    #[arg(long, value_name = "DIR")]
    pub eraser: Option<PathBuf>,
    /// Which ERASER split file to read.
    #[arg(long, default_value = "train")]
    pub eraser_split: String,
    /// For two-document annotations, use the second document as the text
    /// and the first as the query.
    #[arg(long)]
    pub second_as_document: bool,
    /// Comma-separated class names fixing the label order.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    /// Labeled documents per class.
    #[arg(long, default_value_t = 20)]
    pub n_per_class: usize,
    /// Annotated documents held out for validation.
    #[arg(long, default_value_t = 0)]
    pub num_validation: usize,
    /// Output directory.
    #[arg(long, short)]
    pub out: PathBuf,
}

/// Options shared by commands that read a run configuration.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `self_train.learning_rate=1e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Prepared split directory (sets `data.split`).
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Output directory (sets `output`).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Maximum self-training iterations; 0 trains the teacher only.
    #[arg(long)]
    pub max_iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Comma-separated loss components to switch off: wu, suff, comp,
    /// sparsity, continuity, co (sparsity and continuity), reweight.
    #[arg(long, value_delimiter = ',')]
    pub ablate: Vec<String>,
    /// Continue the run in the output directory from its last checkpoint,
    /// using its stored configuration.
    #[arg(long)]
    pub resume: bool,
    /// Stop after this many iterations in this invocation; the run can be
    /// resumed later.
    #[arg(long)]
    pub stop_after: Option<usize>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory; its best checkpoint, vocabulary and validation data
    /// are the defaults.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Model checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Vocabulary file written next to the checkpoint by `train`.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Annotated line-delimited JSON corpus to score.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Comma-separated class names of the corpus.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    /// Token-level averaging: micro or macro.
    #[arg(long)]
    pub token_averaging: Option<String>,
    /// Task-level averaging: micro or macro.
    #[arg(long)]
    pub task_averaging: Option<String>,
    /// Write the flat record here as JSON.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Rows to run: teacher-only, sufficiency, re-weighting, sparsity,
    /// completeness, full (all by default).
    #[arg(long, value_delimiter = ',')]
    pub rows: Vec<String>,
    /// Seeds to average over (default: the run seed).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Run directory.
    #[arg(long)]
    pub run: PathBuf,
    /// Destination directory (default: the run directory).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Field delimiter.
    #[arg(long, default_value = ",")]
    pub delimiter: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    logging::init();
    match std::panic::catch_unwind(|| commands::run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            log::error!("{e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
        Err(_) => {
            log::error!("internal failure (panic)");
            ExitCode::from(2)
        }
    }
}
