mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Train and query domain-decomposed neural surrogates of a line-source plume model.
#[derive(Debug, Parser)]
#[command(name = "plume-dd", version)]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scenario and write it as CSV files.
    Generate(GenerateArgs),
    /// Train ensembles on a scenario, one run directory per (lambda, kappa).
    Train(TrainArgs),
    /// Summarize one run, or compare two runs by discontinuity ratio.
    Evaluate(EvaluateArgs),
    /// Predict concentrations for a CSV of (x, y, timestamp) queries.
    Predict(PredictArgs),
    /// Time the plume solver against the surrogate.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Layout {
    Uniform,
    Asymmetric,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, default_value = "paper-mini")]
    preset: String,
    /// JSON file with scenario fields overriding the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    hours: Option<usize>,
    #[arg(long)]
    receptors: Option<usize>,
    #[arg(long, value_enum)]
    layout: Option<Layout>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Scenario directory written by `generate`.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON file with training fields overriding the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Penalty weight; repeat to sweep.
    #[arg(long)]
    lambda: Vec<f64>,
    /// Interval step size; repeat to sweep.
    #[arg(long)]
    kappa: Vec<f64>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    n_b: Option<usize>,
    #[arg(long)]
    t_eval: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    cold_start: bool,
    /// Boundary pairs added to each batch instead of all of them.
    #[arg(long)]
    boundary_sample: Option<usize>,
    /// Pollutant to train; repeat for several (default: all).
    #[arg(long)]
    pollutant: Vec<String>,
    #[arg(long)]
    run_id: Option<String>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(required = true, num_args = 1..=2)]
    runs: Vec<PathBuf>,
    #[arg(long, default_value_t = plume_dd::metrics::DEFAULT_BURN_IN)]
    burn_in: usize,
    /// Also write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    /// Directory holding weather.csv and traffic.csv.
    #[arg(long)]
    inputs: PathBuf,
    /// CSV with x, y and timestamp columns.
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    pollutant: Option<String>,
    /// Add the pollutant's background concentration.
    #[arg(long)]
    background: bool,
    /// Fail if any row cannot be predicted.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    run: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    queries: u64,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    reps: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    pollutant: Option<String>,
    /// Report path (default: <run>/bench.json).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Exit 1 for usage and configuration problems, 2 for failures at run time.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Predict(a) => commands::predict(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Usage(e) | Failure::Runtime(e)) = &f;
            eprintln!("error: {e:#}");
            ExitCode::from(f.code())
        }
    }
}
