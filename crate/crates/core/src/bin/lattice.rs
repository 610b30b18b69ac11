use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use lattice_core::cli::{cmd_evaluate, cmd_prepare, cmd_sweep, cmd_train, parse_values, SweepAxis};
use lattice_core::{Partition, RunConfig};

#[derive(Parser)]
#[command(name = "lattice", version, about = "Train and evaluate multimodal item-graph recommenders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split the interactions and write the split manifest
    Prepare {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train and write the best checkpoint and the epoch log
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Unsupported; always an error
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on the validation or test partition
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        partition: Partition,
    },
    /// Retrain for each value of k or lambda and tabulate test metrics
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values
        #[arg(long)]
        values: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &PathBuf) -> Result<RunConfig> {
    RunConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare { config } => {
            let m = cmd_prepare(&load(&config)?)?;
            println!("{}", serde_json::to_string_pretty(&m)?);
        }
        Command::Train { config, resume } => {
            let out = cmd_train(&load(&config)?, resume)?;
            println!(
                "best epoch {} (val recall@20 {:.5}); checkpoint {}",
                out.fit.best_epoch,
                out.fit.best_val_recall,
                out.checkpoint.display()
            );
        }
        Command::Evaluate {
            config,
            checkpoint,
            partition,
        } => {
            let r = cmd_evaluate(&load(&config)?, checkpoint.as_deref(), partition)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        Command::Sweep {
            config,
            axis,
            values,
            out,
        } => {
            let values = parse_values(&values)?;
            let (path, rows) = cmd_sweep(&load(&config)?, axis, &values, out.as_deref())?;
            print!("{}", lattice_core::cli::sweep_table(&rows));
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Ok(n) = std::env::var("LATTICE_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .expect("thread pool is configured once");
            }
            _ => {
                eprintln!("error: LATTICE_THREADS must be a positive integer, got `{}`", n);
                return ExitCode::from(2);
            }
        }
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::FAILURE
        }
    }
}
