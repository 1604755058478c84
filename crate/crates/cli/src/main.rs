mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(
    name = "cellsurr",
    version,
    about = "Battery simulator, CNN surrogate and rollout tools"
)]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "CELLSURR_THREADS")]
    threads: Option<usize>,
    /// JSON file of flag values; flags on the command line take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate drive cycles (or constant-current discharges) into a dataset.
    #[command(args_override_self = true)]
    Gen(GenArgs),
    /// Train a surrogate on the train split of a dataset.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// One-step and K-step evaluation with the failure threshold table.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Roll the surrogate out over one cycle next to the simulator.
    #[command(args_override_self = true)]
    Rollout(RolloutArgs),
    /// Estimate the aging factor gamma of simulated aged cells.
    #[command(args_override_self = true)]
    Soh(SohArgs),
    /// Time the simulator against a surrogate rollout on the same cycle.
    #[command(args_override_self = true)]
    Bench(BenchArgs),
    /// Render a CSV (first column x, one series per other column) as SVG.
    #[command(args_override_self = true)]
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 1,500 train / 300 test cycles.
    Desk,
    /// 15,000 train / 3,000 test cycles.
    Paper,
}

impl Preset {
    pub fn counts(self) -> (usize, usize) {
        match self {
            Preset::Desk => (1500, 300),
            Preset::Paper => (15_000, 3_000),
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct GenArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Parameter set JSON (default: bundled).
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    /// Total cycles, one sixth of them (at least one) held out for test.
    #[arg(long)]
    pub cycles: Option<usize>,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    /// Windows (100 s each) per drive cycle.
    #[arg(long, default_value_t = 40)]
    pub windows: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated C-rates: build a constant-current dataset instead.
    #[arg(long, value_delimiter = ',')]
    pub constant_current: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Print the resolved cycle counts and exit without simulating or writing anything.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for model.ckpt, history and plots.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 2e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.5)]
    pub lr_decay: f64,
    #[arg(long, default_value_t = 10.0)]
    pub voltage_weight: f64,
    #[arg(long, default_value_t = 1.0)]
    pub failure_weight: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Predict increments over the input state instead of absolute values.
    #[arg(long)]
    pub residual: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Report JSON path.
    #[arg(long)]
    pub report: PathBuf,
    /// Directory for traces and plots (default: the report's directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Evaluate the train split instead of the test split.
    #[arg(long)]
    pub train_split: bool,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2, 0.3, 0.4, 0.5])]
    pub thresholds: Vec<f64>,
    /// Number of K-step voltage traces to export.
    #[arg(long, default_value_t = 3)]
    pub traces: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct RolloutArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Seed of the random drive cycle.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 40)]
    pub windows: usize,
    /// Explicit comma-separated breakpoints instead of a random cycle.
    #[arg(long, value_delimiter = ',')]
    pub currents: Option<Vec<f64>>,
}

#[derive(Args, Debug, Serialize)]
pub struct SohArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.85, 0.9, 0.95])]
    pub gamma: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    /// Drive cycles per estimate.
    #[arg(long, default_value_t = 5)]
    pub cycles: usize,
    #[arg(long, default_value_t = 40)]
    pub windows: usize,
    #[arg(long, default_value_t = 1_000_000)]
    pub seed: u64,
}

#[derive(Args, Debug, Serialize)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1_000_000)]
    pub seed: u64,
    #[arg(long, default_value_t = 40)]
    pub windows: usize,
    #[arg(long, default_value_t = 5)]
    pub repetitions: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct PlotArgs {
    #[arg(long)]
    pub csv: PathBuf,
    /// Output SVG path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "")]
    pub title: String,
}

fn main() -> ExitCode {
    let args = match run::expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    let threads = cli
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        eprintln!("warning: could not configure the thread pool: {e}");
    }
    let result = match &cli.command {
        Command::Gen(a) => commands::gen(a, threads),
        Command::Train(a) => commands::train(a, threads),
        Command::Eval(a) => commands::eval(a, threads),
        Command::Rollout(a) => commands::rollout_cmd(a, threads),
        Command::Soh(a) => commands::soh(a, threads),
        Command::Bench(a) => commands::bench(a, threads),
        Command::Plot(a) => commands::plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<commands::Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
