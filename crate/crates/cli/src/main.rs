//! `grnet` command-line front end.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use grnet::mte::ResidualMethod;
use grnet::synth::Scenario;

/// Settings resolve in order: command-line flag, then the config file, then
/// the built-in default.
#[derive(Debug, Parser)]
#[command(name = "grnet", version, about = "Guided-residual forgery detection toolkit")]
#[command(after_help = "Precedence: command-line flags > config file > built-in defaults.\n\
The config file is --config, or $GRNET_CONFIG when the flag is absent.")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, env = "GRNET_CONFIG", value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Overrides the seed from the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the residual of one image, a gain-amplified view, and statistics.
    Extract(ExtractArgs),
    /// Generate a synthetic dataset with train/test manifests.
    Generate(GenerateArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Multi-seed stream and fusion ablation.
    Ablate(AblateArgs),
    /// Time the guided filter across window radii.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Input image (PNG, PGM or PPM).
    pub input: PathBuf,
    /// Residual output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Visualization output; defaults to `<out stem>_vis.<ext>`.
    #[arg(long)]
    pub vis: Option<PathBuf>,
    #[arg(long, default_value = "guided")]
    pub method: ResidualMethod,
    #[arg(long)]
    pub radius: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Visualization gain.
    #[arg(long, default_value_t = 5.0)]
    pub gain: f64,
    /// Manipulated region as `x,y,width,height`; adds the inside/outside contrast.
    #[arg(long)]
    pub region: Option<String>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub train_per_class: Option<usize>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
    /// Comma-separated subset of raw, jp60, me5.
    #[arg(long, value_delimiter = ',')]
    pub scenarios: Option<Vec<Scenario>>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset manifest; without one, the split is generated from `[dataset]`.
    #[arg(long, value_name = "MANIFEST")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub scenario: Option<Scenario>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Directory holding `train.tsv` and `test.tsv`; generated in memory otherwise.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Number of seeds, counting up from `--seed` (or 0).
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub scenarios: Option<Vec<Scenario>>,
    /// Also compare attention fusion against max/min/sum/concat on jp60.
    #[arg(long)]
    pub fusion_study: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Also write the machine-readable records to this file.
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// Exit nonzero when a check fails.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 512)]
    pub size: usize,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
    pub radii: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub epsilon: f64,
    #[arg(long)]
    pub json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // some causes already print their source; skip repeats
            let mut msg = String::new();
            for cause in e.chain() {
                let text = cause.to_string();
                if !msg.contains(&text) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&text);
                }
            }
            let msg = msg.replace('\n', " ");
            eprintln!("grnet: error: {msg}");
            ExitCode::FAILURE
        }
    }
}
