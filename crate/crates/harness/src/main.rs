use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::error;
use lrw_harness::{output, run, Experiment, ExperimentConfig, HarnessError, Precision};

#[derive(Parser, Debug)]
#[command(name = "lrwsde", version, about = "Lattice random walk SDE experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// KL to the OU stationary law over a (dt, dx) grid.
    OuGrid(Args),
    /// LRW and Euler-Maruyama KL under reduced-precision drift/diffusion.
    OuQuant(Args),
    /// Ergodic-mean error on the Poisson random-effects posterior.
    Poisson(Args),
    /// Weak-error sweep on the 1-d OU cosine test.
    Converge(Args),
    /// Record OU trajectories.
    Simulate(Args),
}

#[derive(clap::Args, Debug)]
struct Args {
    /// JSON config; missing keys take the subcommand defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Multiplies step, seed and replica counts.
    #[arg(long)]
    scale: Option<f64>,
    /// CSV destination; a JSON sidecar is written next to it. Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces the precision list.
    #[arg(long, value_enum)]
    precision: Option<CliPrecision>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CliPrecision {
    Fp8,
    Fp16,
    Fp32,
}

impl From<CliPrecision> for Precision {
    fn from(p: CliPrecision) -> Self {
        match p {
            CliPrecision::Fp8 => Precision::Fp8,
            CliPrecision::Fp16 => Precision::Fp16,
            CliPrecision::Fp32 => Precision::Fp32,
        }
    }
}

fn resolve(experiment: Experiment, args: &Args) -> Result<ExperimentConfig, HarnessError> {
    let text = match &args.config {
        Some(path) => Some(
            std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?,
        ),
        None => None,
    };
    let mut cfg = ExperimentConfig::resolve(experiment, text.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.base_seed = seed;
    }
    if let Some(p) = args.precision {
        cfg.precisions = vec![p.into()];
    }
    if let Some(out) = &args.out {
        cfg.output = Some(out.clone());
    }
    if let Some(scale) = args.scale {
        cfg = cfg.scaled(scale)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(experiment: Experiment, args: &Args) -> Result<(), HarnessError> {
    let cfg = resolve(experiment, args)?;
    let result = run(&cfg)?;
    match &cfg.output {
        Some(path) => output::write_files(path, &cfg, &result),
        None => output::write_csv(&result.table, std::io::stdout().lock()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (experiment, args) = match &cli.command {
        Command::OuGrid(a) => (Experiment::OuGrid, a),
        Command::OuQuant(a) => (Experiment::OuQuant, a),
        Command::Poisson(a) => (Experiment::Poisson, a),
        Command::Converge(a) => (Experiment::Converge, a),
        Command::Simulate(a) => (Experiment::Simulate, a),
    };
    match execute(experiment, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("lrwsde: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
