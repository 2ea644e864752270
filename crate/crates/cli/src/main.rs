use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod output;

use commands::CliError;

#[derive(Parser, Debug)]
#[command(name = "asa", version, about = "Device-aware tiered federated learning simulator")]
struct Cli {
    /// Experiment configuration (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `simulation.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `simulation.rounds`.
    #[arg(long, global = true)]
    rounds: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Profile and score the fleet; writes fleet.csv and scores.csv.
    Bench,
    /// Cluster the fleet into tiers; writes assignment.csv and constraints.ndjson.
    Cluster,
    /// Run one ASA experiment with checkpoints.
    Train {
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run several methods on the same fleet, shards and seeds.
    Compare {
        #[arg(long, value_delimiter = ',', default_value = "asa,fedavg,fedprox,hierfl")]
        methods: Vec<String>,
        /// Accuracy used for the rounds-to-target column.
        #[arg(long, default_value_t = 0.8)]
        target: f64,
    },
    /// Quadratic-oracle Monte-Carlo reports, plus empirical fits of a round log.
    Diagnose {
        /// Round log (rounds.ndjson) to fit.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Noise scale used when fitting the round log.
        #[arg(long, default_value_t = 1.0)]
        sigma2: f64,
    },
    /// Grid sweep over the compute/memory/network scoring weights.
    SweepWeights {
        #[arg(long, default_value_t = 0.1)]
        step: f64,
        /// Train ASA for this many rounds per grid point (0 skips training).
        #[arg(long, default_value_t = 0)]
        train_rounds: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ASA_LOG", "warn")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Config(_) => ExitCode::from(2),
                CliError::Runtime(_) => ExitCode::from(3),
            }
        }
    }
}
