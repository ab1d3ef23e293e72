//! `cleanctg`: command-line workbench.

mod commands;
mod config;
mod manifest;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "cleanctg", version, about = "Fetal heart rate artefact detection and reconstruction")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Seed for every random draw of the command.
    #[arg(long, global = true, env = "CLEANCTG_SEED", default_value_t = 0)]
    pub seed: u64,
    /// JSON object (or path to one) of dotted-path config overrides.
    #[arg(long, global = true)]
    pub config: Option<String>,
    /// Worker threads for per-segment work (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a clean synthetic trace.
    Synth(SynthArgs),
    /// Inject synthetic artefacts into a clean trace.
    Inject(InjectArgs),
    /// Inject clean segments and write a training dataset.
    BuildDataset(BuildDatasetArgs),
    /// Train one stage of the model.
    #[command(subcommand)]
    Train(TrainCommand),
    /// Per-minute artefact probabilities and gates for a trace.
    Detect(DetectArgs),
    /// Clean a trace with a trained model.
    Denoise(DenoiseArgs),
    /// Evaluate a model on a dataset.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Reconstruction error against corruption run length.
    Sweep(SweepArgs),
    /// Time to decision of the normality screen on a 60-minute trace.
    Screen(ScreenArgs),
    /// Paired clean/corrupted/denoised screening comparison.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 60)]
    pub minutes: usize,
    /// Generate without accelerations and with low variability.
    #[arg(long)]
    pub non_reactive: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InjectArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub masks: PathBuf,
}

#[derive(Args, Debug)]
pub struct BuildDatasetArgs {
    /// Clean trace CSVs; every complete, artefact-free 10-minute segment is used.
    #[arg(long = "in", num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    /// Number of synthetic clean segments to use instead of (or besides) inputs.
    #[arg(long, default_value_t = 0)]
    pub synthetic: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum TrainCommand {
    /// Stage 1: the artefact detector.
    Detector(TrainDetectorArgs),
    /// Stage 2: the reconstructor on top of a frozen detector.
    Reconstructor(TrainReconstructorArgs),
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum Preset {
    Desk,
    Full,
    Tiny,
}

#[derive(Args, Debug)]
pub struct TrainDetectorArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Directory for config, per-epoch metrics, checkpoint and report.
    #[arg(long)]
    pub run_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
}

#[derive(Args, Debug)]
pub struct TrainReconstructorArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Stage-1 model checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub run_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-minute gates, masks and fusion contributions as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum SplitChoice {
    Test,
    Val,
    Train,
    All,
}

#[derive(Subcommand, Debug)]
pub enum EvalCommand {
    Detect(EvalArgs),
    Reconstruct(EvalArgs),
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Which parents to evaluate; train/val/test need a split stored in the model.
    #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
    pub split: SplitChoice,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Trained model; without it only the baselines are swept.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Dataset whose clean parents are corrupted; synthetic segments otherwise.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub segments: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ScreenArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Model used to denoise the corrupted arm (cohort mode).
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub clean: Option<PathBuf>,
    #[arg(long)]
    pub corrupted: Option<PathBuf>,
    #[arg(long)]
    pub denoised: Option<PathBuf>,
    /// Cohort summary CSV (cohort mode) or comparison JSON (file mode).
    #[arg(long)]
    pub out: PathBuf,
    /// Per-trace comparison JSONL (cohort mode).
    #[arg(long)]
    pub records: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("ERROR usage: {first}");
            return ExitCode::from(1);
        }
    };
    if let Some(j) = cli.common.jobs {
        if j == 0 || rayon::ThreadPoolBuilder::new().num_threads(j).build_global().is_err() {
            eprintln!("ERROR config: --jobs must be a positive thread count");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let validation = match &e {
                cleanctg::Error::Io(io) => io.kind() == std::io::ErrorKind::NotFound,
                other => other.is_validation(),
            };
            eprintln!("ERROR {}: {}", e.code(), e.to_string().replace('\n', " "));
            ExitCode::from(if validation { 1 } else { 2 })
        }
    }
}
