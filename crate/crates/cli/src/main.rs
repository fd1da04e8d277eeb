//! `rmd`: robust minimum-distance tests, confidence sets, local power and
//! Monte Carlo experiments from JSON inputs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rmd_core::ExperimentKind;

mod commands;
mod input;
mod output;

#[derive(Parser)]
#[command(name = "rmd", version, about = "Identification-robust minimum-distance inference")]
struct Cli {
    /// Number of worker threads (defaults to all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Overrides the experiment's master seed, or the solver seed of a single test.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rejection rates at the true beta (size table).
    McSize(McArgs),
    /// Rejection rates over a grid of data-generating betas.
    McPower(McArgs),
    /// Frequencies of correctly estimated ranks and degrees of freedom.
    McRank(McArgs),
    /// Null distribution of the statistic on the linear-Gaussian design, with a KS check.
    McNull(McArgs),
    /// Robust test of H0: beta = beta0.
    Test(InputArgs),
    /// Confidence set by inverting the robust test over a grid of beta values.
    Ci(CiArgs),
    /// Direction of maximum local power and the predicted power curve.
    PowerLocal(PowerArgs),
    /// Simulate an entry-game data set as CSV (market_id, state, a1, a2).
    SimulateGame(SimulateArgs),
}

#[derive(Args)]
struct McArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// CSV destination; overrides `output.csv` in the config. Stdout when neither is set.
    #[arg(long)]
    output: Option<PathBuf>,
    /// JSON metadata destination; defaults to the CSV path with a `.json` extension.
    #[arg(long)]
    meta: Option<PathBuf>,
}

#[derive(Args)]
struct InputArgs {
    /// Problem description (JSON).
    #[arg(long)]
    input: PathBuf,
    /// JSON destination (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CiArgs {
    #[command(flatten)]
    io: InputArgs,
    /// Optional CSV of every grid point.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct PowerArgs {
    #[command(flatten)]
    io: InputArgs,
    /// CSV of the components of the maximum-power direction and their relative weights.
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Design name (identified, unidentified) or a JSON file with game parameters.
    #[arg(long, default_value = "identified")]
    dgp: String,
    /// Number of markets.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// CSV destination (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Why the command failed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    /// Unreadable or invalid input or configuration (exit 2).
    Config(String),
    Core(rmd_core::Error),
    Io(String),
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(msg) => write!(f, "configuration error: {msg}"),
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Io(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<rmd_core::Error> for Failure {
    fn from(e: rmd_core::Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) | Failure::Core(rmd_core::Error::Config(_)) => 2,
            Failure::Core(rmd_core::Error::ErrorBudget { .. }) => 3,
            _ => 1,
        }
    }
}

pub type CliResult<T> = Result<T, Failure>;

fn run(cli: Cli) -> CliResult<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(Failure::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::Io(format!("cannot start thread pool: {e}")))?;
    }
    let seed = cli.seed;
    match cli.command {
        Command::McSize(a) => commands::monte_carlo(ExperimentKind::Size, "mc-size", &a.config, a.output, a.meta, seed),
        Command::McPower(a) => commands::monte_carlo(ExperimentKind::Power, "mc-power", &a.config, a.output, a.meta, seed),
        Command::McRank(a) => commands::monte_carlo(ExperimentKind::Rank, "mc-rank", &a.config, a.output, a.meta, seed),
        Command::McNull(a) => commands::monte_carlo(ExperimentKind::NullDist, "mc-null", &a.config, a.output, a.meta, seed),
        Command::Test(a) => commands::test(&a.input, a.output, seed),
        Command::Ci(a) => commands::ci(&a.io.input, a.io.output, a.csv, seed),
        Command::PowerLocal(a) => commands::power_local(&a.io.input, a.io.output, a.weights, seed),
        Command::SimulateGame(a) => commands::simulate_game(&a.dgp, a.n, seed.unwrap_or(0), a.output),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
