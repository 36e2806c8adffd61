use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use typicality_core::experiment::{ExperimentConfig, Mode, RunSummary};
use typicality_core::Error;

#[derive(Parser)]
#[command(name = "typicality", version, about = "Random-interaction typicality experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single-realization trajectories of the reduced state.
    Speckle(RunArgs),
    /// Ensemble variance of the reduced state against its bound.
    Concentration(RunArgs),
    /// Variance at a fixed time across environment sizes.
    Scaling(RunArgs),
    /// Finite-difference gradient against the exact commutator value.
    GradientCheck(RunArgs),
    /// Monte Carlo Poincaré inequality tests.
    PoincareCheck(RunArgs),
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
        /// Mode to validate for; defaults to the config's own.
        #[arg(long)]
        mode: Option<String>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `workers`; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn fail(err: Error) -> ExitCode {
    eprintln!("error: {err}");
    if err.is_config_error() {
        ExitCode::from(EXIT_CONFIG)
    } else {
        ExitCode::from(EXIT_NUMERICAL)
    }
}

fn print_summary(summary: &RunSummary) {
    for check in &summary.invariants {
        let status = if check.passed { "PASS" } else { "FAIL" };
        println!("{status} {}: {}", check.name, check.detail);
    }
    println!("artifacts written to {}", summary.output_dir.display());
}

fn run(args: RunArgs, mode: Mode) -> Result<RunSummary, Error> {
    let mut config = ExperimentConfig::from_path(&args.config)?;
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if let Some(workers) = args.workers {
        config.workers = workers;
    }
    if let Some(out) = args.out {
        config.output_dir = out;
    }
    config.mode = Some(config.resolve_mode(Some(mode))?);
    typicality_core::experiment::run(&config, mode)
}

fn validate(config: PathBuf, mode: Option<String>) -> Result<(), Error> {
    let config = ExperimentConfig::from_path(&config)?;
    let requested = mode.map(|m| m.parse::<Mode>()).transpose()?;
    let mode = config.resolve_mode(requested)?;
    let report = config.validate(mode)?;
    println!(
        "valid {} config: dim {}, {:.1} MiB per dense matrix",
        report.mode,
        report.dim,
        report.matrix_bytes as f64 / (1u64 << 20) as f64
    );
    for w in &report.warnings {
        println!("warning: {w}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { config, mode } => validate(config, mode),
        Command::Speckle(a) => run(a, Mode::Speckle).map(|s| print_summary(&s)),
        Command::Concentration(a) => run(a, Mode::Concentration).map(|s| print_summary(&s)),
        Command::Scaling(a) => run(a, Mode::Scaling).map(|s| print_summary(&s)),
        Command::GradientCheck(a) => run(a, Mode::GradientCheck).map(|s| print_summary(&s)),
        Command::PoincareCheck(a) => run(a, Mode::PoincareCheck).map(|s| print_summary(&s)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}
