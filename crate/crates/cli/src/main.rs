//! `alqr`: run, re-check and inspect adaptive LQR experiments.

mod analyze;
mod config;
mod error;
mod verify;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use alqr_core::harness::generate_stand_in_plant;
use alqr_core::report::{simulate, write_json};
use alqr_core::Error;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::error::CliResult;

#[derive(Parser)]
#[command(name = "alqr", version, about = "Adaptive LQR with circuit-breaking: simulation and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its reports.
    Simulate(SimulateArgs),
    /// Re-check a simulate output directory from its logs.
    Analyze {
        /// Directory written by `simulate`.
        dir: PathBuf,
    },
    /// Write a random stable, controllable plant as JSON.
    GenPlant(GenPlantArgs),
    /// Run the built-in oracle suite.
    Verify {
        /// Override a DARE option (`rtol`, `max_iter`).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Dotted-path override applied before validation, e.g. `controller.schedule=every-step`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    trials: Option<u32>,
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenPlantArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 0.9)]
    rho: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("ALQR_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Error::config("ALQR_THREADS", format!("expected a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::config("ALQR_THREADS", e.to_string()))?;
    Ok(())
}

fn run_simulate(args: SimulateArgs) -> CliResult<()> {
    let mut value = config::read_value(&args.config)?;
    for raw in &args.set {
        let (key, v) = config::parse_override(raw)?;
        config::apply_override(&mut value, &key, v)?;
    }
    for (key, v) in [
        ("trials", args.trials.map(|t| json!(t))),
        ("horizon", args.horizon.map(|t| json!(t))),
        ("base_seed", args.seed.map(|s| json!(s))),
    ] {
        if let Some(v) = v {
            config::apply_override(&mut value, key, v)?;
        }
    }
    let cfg = config::from_value(value)?;
    configure_threads()?;
    let summary = simulate(&cfg, &args.out)?;
    let slope = summary.slopes.mean.as_ref().map(|s| s.slope);
    println!(
        "{}",
        json!({
            "out": args.out,
            "trials": summary.trial_count,
            "failed_trials": summary.failed_trials,
            "j_star": summary.j_star,
            "slope_mean": slope,
        })
    );
    Ok(())
}

fn run_analyze(dir: PathBuf) -> CliResult<()> {
    configure_threads()?;
    let results = analyze::analyze(&dir)?;
    let mut stdout = std::io::stdout().lock();
    for r in &results {
        writeln!(stdout, "{}", serde_json::to_string(r).expect("analysis serializes")).map_err(Error::from)?;
    }
    Ok(())
}

fn run_gen_plant(args: GenPlantArgs) -> CliResult<()> {
    if args.n == 0 {
        return Err(Error::config("--n", "must be >= 1").into());
    }
    if args.m == 0 {
        return Err(Error::config("--m", "must be >= 1").into());
    }
    if !(args.rho > 0.0 && args.rho < 1.0) {
        return Err(Error::config("--rho", "must lie in (0, 1)").into());
    }
    let plant = generate_stand_in_plant(args.n, args.m, args.rho, args.seed)?.to_json();
    match args.out {
        Some(path) => write_json(&path, &plant)?,
        None => println!("{}", serde_json::to_string_pretty(&plant).expect("plant serializes")),
    }
    Ok(())
}

fn run_verify(set: Vec<String>) -> CliResult<()> {
    let overrides = set
        .iter()
        .map(|raw| config::parse_override(raw))
        .collect::<Result<Vec<_>, _>>()?;
    let opts = verify::options(&overrides)?;
    let checks = verify::run(&opts);
    print!("{}", verify::render(&checks));
    verify::outcome(&checks)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => run_simulate(args),
        Command::Analyze { dir } => run_analyze(dir),
        Command::GenPlant(args) => run_gen_plant(args),
        Command::Verify { set } => run_verify(set),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
