//! `vbtrack` command-line front end.

mod commands;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "vbtrack", version, about = "Multi-target pedestrian tracking from foreground pixels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scenario to measurement and ground-truth CSVs.
    Simulate(SimulateArgs),
    /// Run the tracker over a measurement CSV.
    Track(TrackArgs),
    /// Score tracks against ground truth.
    Evaluate(EvaluateArgs),
    /// Run the tracker and write only the per-frame clusters.
    ClusterDebug(ClusterDebugArgs),
    /// Draw SVG line plots from track and evaluation outputs.
    Plot(PlotArgs),
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Shipped scenario name.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    pub preset: Option<String>,
    /// Scenario TOML file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrackArgs {
    #[arg(long)]
    pub measurements: PathBuf,
    #[arg(long)]
    pub calibration: PathBuf,
    /// Tracker TOML file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write clusters.csv.
    #[arg(long)]
    pub dump_clusters: bool,
    /// Also write assoc.csv.
    #[arg(long)]
    pub dump_assoc: bool,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub tracks: PathBuf,
    #[arg(long)]
    pub ground_truth: PathBuf,
    /// Tracker TOML file; only its `[metrics]` section is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ClusterDebugArgs {
    #[arg(long)]
    pub measurements: PathBuf,
    #[arg(long)]
    pub calibration: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct PlotArgs {
    /// frames.csv written by `track`.
    #[arg(long)]
    pub frames: Option<PathBuf>,
    /// Ground-truth CSV, adds the true count to the count plot.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    /// metrics.csv written by `evaluate`.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Track(a) => commands::track(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::ClusterDebug(a) => commands::cluster_debug(&a),
        Command::Plot(a) => commands::plot(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
