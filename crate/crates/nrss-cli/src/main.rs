//! Command-line front end: loads a JSON run configuration, applies flag
//! overrides, executes the requested mode, and reports the manifest summary.
//!
//! Exit status is nonzero exactly when zero sub-runs succeeded.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nrss::io::config::{Mode, RunConfig};
use nrss::io::run::run;

/// Worker-count fallback consulted only when --workers is absent.
const WORKERS_ENV: &str = "NRSS_WORKERS";

#[derive(Parser)]
#[command(
    name = "nrss",
    version,
    about = "Network-response regression with structured shrinkage"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config value.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config value.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for sub-run dispatch, overriding config and the
    /// NRSS_WORKERS environment variable.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset: genotypes, connectomes, truth, network.
    Simulate(Common),
    /// Detect correlated SNP blocks in a genotype file.
    Blocks(Common),
    /// Fit the model to a dataset.
    Fit(Common),
    /// Search a penalty grid by validation prediction error.
    Grid(Common),
    /// Stability selection over subject subsamples.
    Stability(Common),
    /// Score a fit (and optional stability output) against a truth file.
    Eval(Common),
    /// Compare Monte Carlo prior correlations with the analytic table.
    PriorCheck(Common),
    /// Emit plot-ready CSVs from previous outputs.
    ExportPlot(Common),
}

impl Command {
    fn mode(&self) -> Mode {
        match self {
            Command::Simulate(_) => Mode::Simulate,
            Command::Blocks(_) => Mode::Blocks,
            Command::Fit(_) => Mode::Fit,
            Command::Grid(_) => Mode::Grid,
            Command::Stability(_) => Mode::Stability,
            Command::Eval(_) => Mode::Eval,
            Command::PriorCheck(_) => Mode::PriorCheck,
            Command::ExportPlot(_) => Mode::ExportPlot,
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Simulate(c)
            | Command::Blocks(c)
            | Command::Fit(c)
            | Command::Grid(c)
            | Command::Stability(c)
            | Command::Eval(c)
            | Command::PriorCheck(c)
            | Command::ExportPlot(c) => c,
        }
    }
}

fn build_config(cli: &Cli) -> Result<RunConfig, String> {
    let common = cli.command.common();
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path).map_err(|e| e.to_string())?,
        None => RunConfig::default(),
    };
    config.mode = Some(cli.command.mode());
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    match common.workers {
        Some(w) => config.workers = w,
        None => {
            if let Ok(text) = std::env::var(WORKERS_ENV) {
                let w = text
                    .parse::<usize>()
                    .map_err(|_| format!("{WORKERS_ENV}='{text}' is not a worker count"))?;
                config.workers = w;
            }
        }
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match build_config(&cli) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::FAILURE;
        }
    };

    match run(&config) {
        Ok(outcome) => {
            let m = &outcome.manifest;
            println!("mode: {}", m.mode);
            println!("output: {}", config.out_dir.display());
            println!("seed: {}", m.seed);
            println!(
                "sub-runs: {} ok, {} failed ({:.2}s)",
                m.n_succeeded(),
                m.n_failed(),
                m.wall_time_secs
            );
            for status in m.statuses.iter().filter(|s| !s.ok) {
                eprintln!("failed {}: {}", status.name, status.detail);
            }
            if outcome.succeeded() {
                ExitCode::SUCCESS
            } else {
                eprintln!("error: no sub-run succeeded");
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
