mod commands;
mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use flame_core::governor::{Disturbance, Policy};
use flame_core::layerfit::RegressorKind;

use error::CliError;

const AFTER_HELP: &str = "Units: frequencies in GHz, latencies and deadlines in ms, power in W.\n\
Relative --out paths are placed under $FLAME_DATA_DIR when it is set.";

/// Latency estimation and frequency governing for CPU-GPU inference on a
/// simulated edge device.
#[derive(Debug, Parser)]
#[command(name = "flame", version, after_help = AFTER_HELP)]
pub struct Cli {
    /// Seed for randomized commands (gen-device, profile, govern); required there.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output path; each command has its own default file name.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Increase log detail (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic device (frequency grid in GHz, power model in W). Needs --seed.
    #[command(after_help = AFTER_HELP)]
    GenDevice(GenDeviceArgs),
    /// Profile every layer of a model across the frequency grid (latencies in ms). Needs --seed.
    #[command(after_help = AFTER_HELP)]
    Profile(ProfileArgs),
    /// Fit per-layer-type estimators from a profile dataset.
    #[command(after_help = AFTER_HELP)]
    Fit(FitArgs),
    /// Estimate end-to-end latency (ms) of a model at one frequency pair (GHz).
    #[command(after_help = AFTER_HELP)]
    Estimate(EstimateArgs),
    /// Estimate latency (ms) at every grid pair (GHz) as CSV, optionally against ground truth.
    #[command(after_help = AFTER_HELP)]
    Sweep(SweepArgs),
    /// Run the deadline-aware governing loop (deadlines in ms, power in W). Needs --seed.
    #[command(after_help = AFTER_HELP)]
    Govern(GovernArgs),
    /// Summarize a governing trace: MAPE (%), QoS (%), power (W) and performance per watt.
    #[command(after_help = AFTER_HELP)]
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct GenDeviceArgs {
    /// Number of CPU frequency levels.
    #[arg(long, default_value_t = 29)]
    pub cpu_levels: usize,
    /// Number of GPU frequency levels.
    #[arg(long, default_value_t = 11)]
    pub gpu_levels: usize,
    /// Lowest CPU frequency, GHz.
    #[arg(long, default_value_t = 0.1)]
    pub cpu_min_ghz: f64,
    /// Highest CPU frequency, GHz.
    #[arg(long, default_value_t = 2.2)]
    pub cpu_max_ghz: f64,
    /// Lowest GPU frequency, GHz.
    #[arg(long, default_value_t = 0.3)]
    pub gpu_min_ghz: f64,
    /// Highest GPU frequency, GHz.
    #[arg(long, default_value_t = 1.3)]
    pub gpu_max_ghz: f64,
    /// Log-normal measurement jitter sigma (dimensionless).
    #[arg(long, default_value_t = 0.03)]
    pub jitter: f64,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// Model spec JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Device JSON from gen-device.
    #[arg(long)]
    pub device: PathBuf,
    /// Profile every n-th CPU level (highest level always included).
    #[arg(long, default_value_t = 4)]
    pub cpu_stride: usize,
    /// Profile every n-th GPU level (highest level always included).
    #[arg(long, default_value_t = 4)]
    pub gpu_stride: usize,
    /// Context-length stride for transformer layers, tokens.
    #[arg(long, default_value_t = 90)]
    pub context_stride: usize,
    /// Largest profiled context length, tokens.
    #[arg(long, default_value_t = 1024)]
    pub context_max: u64,
    /// Repeats averaged per sample.
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Profile dataset CSV (with its .meta.json sidecar alongside).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Coefficient regressor family.
    #[arg(long, default_value = "ridge")]
    pub regressor: RegressorKind,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Coefficient store JSON from fit.
    #[arg(long)]
    pub estimators: PathBuf,
    /// Model spec JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// CPU frequency, GHz.
    #[arg(long)]
    pub fc: f64,
    /// GPU frequency, GHz.
    #[arg(long)]
    pub fg: f64,
    /// Also write the reconstructed per-layer timeline (ms) as CSV.
    #[arg(long)]
    pub timeline: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Coefficient store JSON from fit.
    #[arg(long)]
    pub estimators: PathBuf,
    /// Model spec JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Device JSON; adds noise-free ground truth (ms) and error (%) columns.
    #[arg(long)]
    pub device: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("deadline").required(true).args(["deadline_ms", "deadline_schedule"]))]
pub struct GovernArgs {
    /// Coefficient store JSON from fit.
    #[arg(long)]
    pub estimators: PathBuf,
    /// Device JSON to govern.
    #[arg(long)]
    pub device: PathBuf,
    /// Model spec JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Constant per-inference deadline, ms.
    #[arg(long)]
    pub deadline_ms: Option<f64>,
    /// Deadline schedule JSON: {"initial_ms": 20, "changes": [{"step": 100, "deadline_ms": 12}]}.
    #[arg(long)]
    pub deadline_schedule: Option<PathBuf>,
    /// Number of inferences (or tokens) to run.
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    /// Background load slowing both processors, e.g. 0.3@step250 or 0.3@step100-step250.
    #[arg(long)]
    pub disturb: Option<Disturbance>,
    /// Frequency-selection policy: greedy, oracle or max.
    #[arg(long, default_value = "greedy")]
    pub policy: Policy,
    /// Disable online bias correction of estimates.
    #[arg(long)]
    pub no_adapt: bool,
    /// Governs per token: transformer context starts here (tokens) and grows each step.
    #[arg(long, requires = "token_max")]
    pub token_start: Option<u64>,
    /// Context length (tokens) after which the context wraps back to --token-start.
    #[arg(long, requires = "token_start")]
    pub token_max: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Trace CSV written by govern.
    #[arg(long)]
    pub trace: PathBuf,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Err(e) = commands::run(&cli) {
        eprintln!("error[{}]: {e}", e.kind());
        std::process::exit(e.exit_code());
    }
}

/// Shared so commands can report usage errors the parser cannot express.
pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}
