mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use soc_pinn::Error;

/// Train, evaluate and roll out the two-branch SoC network.
#[derive(Debug, Parser)]
#[command(name = "soc-pinn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic cycles from a cell/load spec.
    Synth(SynthArgs),
    /// Convert cycling CSVs into the canonical dataset layout.
    Ingest(IngestArgs),
    /// Train one model, or one per seed.
    Train(TrainArgs),
    /// Per-horizon MAE of checkpoints and the Physics-Only baseline.
    Eval(EvalArgs),
    /// Autoregressive prediction over whole cycles.
    Rollout(RolloutArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Synthetic spec (JSON). Defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Base seed; overrides the spec's.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Input CSV files.
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
    #[arg(long, value_parser = ["sandia", "lg", "generic"])]
    pub schema: String,
    /// Column mapping (JSON) for the generic schema; canonical names otherwise.
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    /// SoC anchor when no SoC column exists: start-full, start-empty,
    /// end-full, end-empty, auto, or an initial SoC value.
    #[arg(long)]
    pub anchor: Option<String>,
    #[arg(long)]
    pub c_rated: Option<f64>,
    /// Load-profile label stored in the metadata (e.g. mixed, udds).
    #[arg(long)]
    pub profile: Option<String>,
    /// Signed discharge C-rate stored in the metadata; inferred when omitted.
    #[arg(long, allow_hyphen_values = true)]
    pub c_rate_discharge: Option<f64>,
    /// Trailing moving-average window (s) applied to V, I and T.
    #[arg(long)]
    pub moving_average: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Training config (JSON); flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train this many seeds, starting at the configured seed.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// off | single:<h> | all
    #[arg(long)]
    pub physics: Option<String>,
    /// Physics horizons, e.g. 120,240,360.
    #[arg(long)]
    pub horizons: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// all | sandia | lg | <explicit split JSON>
    #[arg(long, default_value = "all")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint file or training output directory, optionally `LABEL=PATH`.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<String>,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub horizons: String,
    /// Comma-separated: cascaded, teacher-forced, branch1-only.
    #[arg(long, default_value = "cascaded")]
    pub modes: String,
    /// all | sandia | lg | <explicit split JSON>; the test side is evaluated.
    #[arg(long, default_value = "all")]
    pub split: String,
    #[arg(long, default_value = "eval")]
    pub run_id: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Cycle ids; every test cycle when omitted.
    #[arg(long = "cycle")]
    pub cycles: Vec<String>,
    #[arg(long)]
    pub horizon: f64,
    /// pinn | no-pinn | physics-only
    #[arg(long, default_value = "pinn")]
    pub mode: String,
    #[arg(long, default_value = "all")]
    pub split: String,
    #[arg(long, default_value = "rollout")]
    pub run_id: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Layer widths to check, e.g. 3,16,32,16,1; both default branches otherwise.
    #[arg(long)]
    pub arch: Option<String>,
    /// Random (seed, input) pairs per architecture.
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value = "out/gradcheck")]
    pub out: PathBuf,
}

/// Failure categories with distinct exit codes.
#[derive(Debug)]
pub enum Failure {
    /// A check ran and did not pass.
    Verification(String),
    Soc(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Soc(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Verification(_) => 1,
            Failure::Soc(e) if e.is_config() => 2,
            Failure::Soc(Error::Generation(_)) => 2,
            Failure::Soc(Error::Numeric(_)) => 1,
            Failure::Soc(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Verification(m) => f.write_str(m),
            Failure::Soc(e) => write!(f, "{e}"),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Ingest(a) => commands::ingest(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Rollout(a) => commands::rollout(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
