//! Command-line shell around the single-magnon detector simulations.

mod commands;
mod config;
mod output;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use output::{Provenance, RunWriter};

#[derive(Parser)]
#[command(
    name = "magnon-qnd",
    version,
    about = "Simulations of an entanglement-based single-magnon detector"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON run configuration; omitted fields take the device defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (default: all logical cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory for this run.
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed recorded in the provenance and used by sampling runs.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the zero-drive trajectory as trajectory.csv.
    #[arg(long)]
    emit_trajectory: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one detection protocol: amplitude sweep, dark count, efficiency.
    Detect(CommonArgs),
    /// Detector metrics over the detection-time grid.
    SweepTau(CommonArgs),
    /// Error budget: rerun the pipeline with each error source disabled.
    Budget(CommonArgs),
    /// Closed-form qubit spectrum, optionally with a simulated Ramsey check.
    Spectrum(CommonArgs),
    /// Bound the readout errors from the simulated control-error curve.
    ReadoutBounds(CommonArgs),
    /// Pi-pulse amplitude calibration across detection times.
    Calibrate(CommonArgs),
    /// Compare a result JSON against a baseline within tolerances.
    Compare {
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        /// Tolerance specification JSON ({"abs":..,"rel":..,"fields":{..}}).
        #[arg(long)]
        tol: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        abs: f64,
        #[arg(long, default_value_t = 0.0)]
        rel: f64,
    },
}

fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    // Flags override file values.
    if let Some(jobs) = common.jobs {
        cfg.jobs = jobs;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.display().to_string();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.emit_trajectory {
        cfg.emit_trajectory = true;
    }
    cfg.validate()?;
    if cfg.jobs > 0 {
        // Ignore the error if a global pool already exists (e.g. in tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build_global();
    }
    Ok(cfg)
}

fn run(common: &CommonArgs, f: impl FnOnce(&RunConfig, &RunWriter) -> Result<()>) -> Result<()> {
    let cfg = load_config(common)?;
    let provenance = Provenance::new(&cfg.canonical_json(), cfg.seed);
    let writer = RunWriter::new(std::path::Path::new(&cfg.output_dir), provenance)?;
    f(&cfg, &writer)
}

fn main() {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Detect(c) => run(c, commands::cmd_detect),
        Command::SweepTau(c) => run(c, commands::cmd_sweep_tau),
        Command::Budget(c) => run(c, commands::cmd_budget),
        Command::Spectrum(c) => run(c, commands::cmd_spectrum),
        Command::ReadoutBounds(c) => run(c, commands::cmd_readout_bounds),
        Command::Calibrate(c) => run(c, commands::cmd_calibrate),
        Command::Compare { result, baseline, tol, abs, rel } => {
            commands::cmd_compare(result, baseline, tol.as_deref(), *abs, *rel)
        }
    };
    if let Err(err) = outcome {
        // Machine-readable error record on failure.
        let msg = format!("{err:#}");
        let record = serde_json::json!({ "error": msg });
        eprintln!("{record}");
        std::process::exit(1);
    }
}
