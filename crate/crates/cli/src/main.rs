//! `ilnet` command-line entry point.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "ilnet", version, about = "Infrared small-target segmentation: train, evaluate and inspect ILNet models")]
pub struct Cli {
    /// key=value configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides one configuration key; repeatable.
    #[arg(long = "override", global = true, value_name = "K=V")]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on a manifest; writes checkpoints and a loss log every epoch.
    Train {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// Resume from this checkpoint (its directory must hold the optimizer state and log).
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Pixel- and target-level metrics of a checkpoint on a manifest.
    Eval {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        #[arg(long, value_name = "PATH", required_unless_present = "predictions")]
        checkpoint: Option<PathBuf>,
        /// Score the masks of this manifest instead of running a model.
        #[arg(long, value_name = "PATH", conflicts_with = "checkpoint")]
        predictions: Option<PathBuf>,
    },
    /// Writes probability maps and side outputs as PGM.
    Infer {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Pd/Fa over evenly spaced thresholds from 1 to 0, as CSV.
    Roc {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "N", default_value_t = 11)]
        thresholds: usize,
    },
    /// Parameter count, FLOPs and batch-1 throughput.
    Bench,
    /// Finite-difference check of every parameter group of the network.
    Gradcheck,
    /// Generates a synthetic small-target dataset with a manifest.
    Synth,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error());
            ExitCode::from(e.code())
        }
    }
}
