//! Command-line experiment driver: TOML configs, federated runs with
//! checkpoints and metrics, loss decompositions, landscape grids and
//! matched-arm comparisons.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "fima", version, about = "Federated averaging / IMA experiment driver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write train.csv and test.csv.
    GenData,
    /// Write partition.csv and a validation report.
    Partition,
    /// Train and write metrics, checkpoints and a manifest.
    Run,
    /// Re-run training and decompose the ensemble loss at the configured cadence.
    Decompose {
        /// Run directory whose manifest and final model must match the re-run.
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Loss/error along the segment between two checkpoints.
    #[command(name = "landscape-1d")]
    Landscape1d {
        #[arg(long = "anchor")]
        anchors: Vec<PathBuf>,
    },
    /// Loss/error over the plane through three checkpoints.
    #[command(name = "landscape-2d")]
    Landscape2d {
        #[arg(long = "anchor")]
        anchors: Vec<PathBuf>,
    },
    /// Matched runs differing along one axis.
    Compare {
        #[arg(long, value_enum)]
        axis: commands::CompareAxis,
        /// Comma-separated arm values, e.g. `fedavg,fednova` or `off,on`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        /// Accuracy threshold for rounds-to-target.
        #[arg(long)]
        target: Option<f64>,
    },
}

fn load_config(common: &CommonArgs) -> CliResult<ExperimentConfig> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one subcommand and returns the lines to print on success.
pub fn execute(cli: &Cli) -> CliResult<Vec<String>> {
    let cfg = load_config(&cli.common)?;
    let out = cfg.out_dir.clone();
    let listing = |files: &[String]| files.iter().map(|f| format!("wrote {}", out.join(f).display())).collect::<Vec<_>>();
    Ok(match &cli.command {
        Command::GenData => listing(&commands::gen_data(&cfg, &out)?),
        Command::Partition => {
            let (files, report) = commands::partition(&cfg, &out)?;
            let mut lines = vec![report];
            lines.extend(listing(&files));
            lines
        }
        Command::Run => {
            let r = commands::run(&cfg, &out)?;
            let last = r.outcome.trajectory.last().expect("at least one round");
            let mut lines = vec![format!(
                "round {}: test_acc {:.4} test_loss {:.4} last10_acc {:.4} ({})",
                last.round,
                last.test_acc,
                last.test_loss,
                commands::last10_accuracy(&r.outcome),
                last.broadcast_kind.as_str()
            )];
            lines.extend(listing(&r.files));
            lines
        }
        Command::Decompose { run } => listing(&commands::decompose(&cfg, &out, run.as_deref())?),
        Command::Landscape1d { anchors } => listing(&commands::landscape_1d(&cfg, &out, anchors)?),
        Command::Landscape2d { anchors } => listing(&commands::landscape_2d(&cfg, &out, anchors)?),
        Command::Compare { axis, values, seeds, target } => {
            let r = commands::compare(&cfg, &out, *axis, values, seeds, *target)?;
            let mut lines: Vec<String> = r.summary.lines().map(str::to_string).collect();
            lines.extend(listing(&r.files));
            lines
        }
    })
}
