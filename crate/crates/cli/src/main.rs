//! `utilfair` command line: synthetic sweeps, model fitting and tests on CSV
//! data.
//!
//! Exit codes: 0 success, 2 usage or schema error, 3 violated
//! precondition, 4 numerical failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use utilfair::simulation::{FIG_RS, FIG_THETAS};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_ASSUMPTION: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "utilfair", version, about = "Hypothesis tests of utility-constrained approximate fairness")]
struct Cli {
    /// Worker threads; AUDIT_THREADS caps this further.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the synthetic pricing study over a grid of thresholds.
    #[command(alias = "simulate-sweep")]
    Simulate(SimulateArgs),
    /// Fit propensity, group-share and outcome models to a CSV dataset.
    Fit(FitArgs),
    /// Run the test on a CSV dataset.
    Test(TestArgs),
    /// Turn a sweep CSV into long-format plot data.
    PlotData(PlotDataArgs),
    /// Write a seeded synthetic dataset in the ingestion format.
    Generate(GenerateArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Comma-separated policy parameters.
    #[arg(long, value_delimiter = ',', default_values_t = FIG_THETAS.to_vec())]
    theta1: Vec<f64>,
    /// Comma-separated utility thresholds.
    #[arg(long, value_delimiter = ',', default_values_t = FIG_RS.to_vec())]
    r: Vec<f64>,
    /// Comma-separated fairness tolerances.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.01])]
    eps: Vec<f64>,
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Significance level.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    /// JSON config; its `solver`, `bootstrap` and `seed` entries apply.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sweep CSV; the JSON summary goes next to it with a `.json`
    /// extension. Without it the CSV goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Add per-cell wall-clock times (makes the output nondeterministic).
    #[arg(long)]
    timings: bool,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Ridge weight of the logistic fits.
    #[arg(long)]
    reg: Option<f64>,
    /// `silverman`, `scott` or a fixed positive bandwidth.
    #[arg(long)]
    bandwidth: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TestArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fitted models written by `fit`, used instead of fitting again.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Utility threshold (required here or in the config).
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reg: Option<f64>,
    #[arg(long)]
    bandwidth: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record phase timings in the report.
    #[arg(long)]
    timings: bool,
}

#[derive(Args, Debug)]
struct PlotDataArgs {
    /// Sweep CSV written by `simulate`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Kind {
    /// The pricing study.
    Pricing,
    /// A classifier audit with labels.
    Classifier,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value_t = Kind::Pricing)]
    kind: Kind,
    #[arg(long, default_value_t = 0.7)]
    theta1: f64,
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Covariate dimension of the classifier audit.
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Thread count from the flag, capped by `AUDIT_THREADS`.
fn thread_count(flag: Option<usize>) -> Result<Option<usize>, String> {
    let env = match std::env::var("AUDIT_THREADS") {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| format!("AUDIT_THREADS must be a positive integer, got '{v}'"))?,
        ),
        Err(_) => None,
    };
    let n = match (flag, env) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    };
    if n == Some(0) {
        return Err("thread count must be positive".into());
    }
    Ok(n)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let threads = match thread_count(cli.threads) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if let Some(t) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: cannot start the thread pool: {e}");
            return ExitCode::from(EXIT_NUMERIC);
        }
    }
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Fit(a) => commands::fit(a),
        Command::Test(a) => commands::test(a),
        Command::PlotData(a) => commands::plot_data(a),
        Command::Generate(a) => commands::generate(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
