use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod files;
mod manifest;

/// Errors in how the tool was invoked, as opposed to bad data.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Debug, Parser)]
#[command(name = "stwind", version, about = "Space-time post-processing of NWP wind-speed forecasts")]
pub struct Cli {
    /// Base random seed (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for the numerical kernels.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build aligned observation and NWP panels from raw files.
    Ingest(IngestArgs),
    /// Simulate panels from a reference parameter pack.
    Simulate(SimulateArgs),
    /// Fit the model by maximum likelihood.
    Fit(FitArgs),
    /// Krige one NWP day and draw scenarios.
    Predict(PredictArgs),
    /// Score scenarios against observations.
    Score(ScoreArgs),
    /// Three train/test rotations: fit, predict and score against the NWP.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Observation records: ASOS minute lines or `timestamp,station,speed_kn` CSV.
    #[arg(long)]
    pub obs: PathBuf,
    /// Station list CSV `id,lat,long`.
    #[arg(long)]
    pub stations: PathBuf,
    /// NWP extraction CSV `day,hour,grid_lat,grid_long,land_use,speed_ms`.
    #[arg(long)]
    pub nwp: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub hours: Option<usize>,
    /// Moving-average window, minutes.
    #[arg(long)]
    pub window: Option<i64>,
    /// Partition stations into this many clusters.
    #[arg(long)]
    pub clusters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub stations: Option<usize>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub days: Option<usize>,
    #[arg(long)]
    pub hours: Option<usize>,
    /// Box-Cox λ under which panels are simulated.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Keep the panels in transformed space instead of m/s.
    #[arg(long)]
    pub transformed: bool,
}

/// Options shared by commands that fit the model.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Raw observation panel CSV (sidecar alongside).
    #[arg(long)]
    pub obs: PathBuf,
    /// Raw NWP panel CSV (sidecar alongside).
    #[arg(long)]
    pub nwp: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// full, temporal-only or bias-only.
    #[arg(long)]
    pub variant: Option<String>,
    /// Restrict to the stations of one cluster.
    #[arg(long)]
    pub cluster: Option<u32>,
    #[arg(long)]
    pub lambda_obs: Option<f64>,
    #[arg(long)]
    pub lambda_nwp: Option<f64>,
    /// Skip standard errors.
    #[arg(long)]
    pub no_se: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Start from this parameter file instead of the least-squares start.
    #[arg(long)]
    pub init_params: Option<PathBuf>,
    /// Write the per-iteration log-likelihood here.
    #[arg(long)]
    pub loglik_trace: Option<PathBuf>,
    /// Cross-validation scheme; only `rolling3` is known.
    #[arg(long)]
    pub cv: Option<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// Raw NWP panel CSV.
    #[arg(long)]
    pub nwp: PathBuf,
    /// 1-based day of the NWP panel.
    #[arg(long)]
    pub day: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Target list CSV `hour,station_id`; all station-hours by default.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    #[arg(long)]
    pub scenarios: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Scenario CSV `scenario,day,hour,station_id,value`.
    #[arg(long)]
    pub scenarios: PathBuf,
    /// Raw observation panel CSV.
    #[arg(long)]
    pub obs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub scenarios: Option<usize>,
}

/// Exit status for an error: 1 usage, 3 numerical failure, 2 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<UsageError>()) {
        return 1;
    }
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<stwind::Error>())
        .any(stwind::Error::is_numerical);
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.chain().map(|c| c.to_string()).collect::<Vec<_>>().join(": ");
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
