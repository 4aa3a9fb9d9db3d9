//! `mattekit`: dataset synthesis, training, inference, evaluation and
//! trimap-robustness sweeps for the deep matting pipeline, driven by one
//! TOML config. `MATTEKIT_THREADS` caps the worker pool; results are
//! bitwise identical at any thread count.

mod commands;
mod runlog;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mattekit::model::RefineMode;

#[derive(Parser)]
#[command(
    name = "mattekit",
    version,
    about = "Deep image matting: synthesize composite datasets, train the \
             two-stage matting network, predict alpha mattes and score them."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Composite foreground assets over backgrounds into a dataset
    Synth(SynthArgs),
    /// Run the three-phase training schedule and save a checkpoint
    Train(TrainArgs),
    /// Predict alpha mattes for a dataset or a single image/trimap pair
    Infer(InferArgs),
    /// Score predicted mattes against ground truth
    Eval(EvalArgs),
    /// Re-evaluate across trimap dilation widths
    Sweep(SweepArgs),
    /// Print checkpoint metadata and the tensor directory
    Inspect(InspectArgs),
}

/// Flags shared by every pipeline command.
#[derive(Args)]
struct ConfigArgs {
    /// Pipeline config (TOML); built-in defaults when omitted
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override the config's root seed
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: ConfigArgs,

    /// Dataset output directory (default: paths.dataset from the config)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: ConfigArgs,

    /// Where to save the trained weights (default: paths.checkpoint)
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,

    /// Directory for history.csv and run.jsonl (default: paths.out, then
    /// the checkpoint's directory)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    common: ConfigArgs,

    /// Dataset directory (with manifest.json) or a single image PNG
    input: PathBuf,

    /// Trimap PNG; required when INPUT is a single image
    trimap: Option<PathBuf>,

    /// Trained weights to run
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,

    /// Post-processing: none, stage2, or guided:r=R,eps=E
    /// (default: eval.refine from the config)
    #[arg(long, value_name = "MODE")]
    refine: Option<RefineMode>,

    /// Output directory for predicted mattes
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: ConfigArgs,

    /// Directory of predicted mattes: <id>.png or <id>/alpha.png
    pred: PathBuf,

    /// Ground-truth dataset directory: <id>/alpha.png + <id>/trimap.png
    gt: PathBuf,

    /// Directory for report.csv/report.json (default: CSV on stdout)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: ConfigArgs,

    /// Trained weights; without this the trimap-copy baseline is swept
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,

    /// Dilation radii to evaluate (default: eval.sweep.d_list)
    #[arg(long, value_name = "D,D,...", value_delimiter = ',')]
    d_list: Option<Vec<u32>>,

    /// Post-processing for the model predictor (default: eval.refine)
    #[arg(long, value_name = "MODE")]
    refine: Option<RefineMode>,

    /// Directory for report.csv/report.json (default: CSV on stdout)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    /// Checkpoint file to describe
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
}

/// Applies `MATTEKIT_THREADS` before any rayon pool is touched.
fn init_threads() -> anyhow::Result<()> {
    let raw = match std::env::var("MATTEKIT_THREADS") {
        Ok(raw) => raw,
        Err(std::env::VarError::NotPresent) => return Ok(()),
        Err(e) => return Err(e.into()),
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| anyhow::anyhow!("MATTEKIT_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(Into::into)
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Synth(args) => commands::synth(args),
        Command::Train(args) => commands::train(args),
        Command::Infer(args) => commands::infer(args),
        Command::Eval(args) => commands::eval(args),
        Command::Sweep(args) => commands::sweep(args),
        Command::Inspect(args) => commands::inspect(args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::FAILURE;
    }
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
