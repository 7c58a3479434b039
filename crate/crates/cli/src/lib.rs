//! Command-line front end: run configuration, the four subcommands and SVG plots.

pub mod commands;
pub mod config;
pub mod plot;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{cmd_diagnose, cmd_eval, cmd_plot, cmd_train, CliError};
pub use config::{ConfigError, RunConfig};
pub use plot::PlotSpec;

#[derive(Debug, Parser)]
#[command(name = "rlab", version, about = "Adversarial-training laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and record per-epoch robustness metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint against the configured attack list.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Draw an SVG chart from one or more metrics CSVs.
    Plot {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Report catastrophic-overfitting events in a metrics CSV.
    Diagnose {
        #[arg(long)]
        metrics: PathBuf,
    },
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Train { config } => {
            let cfg = RunConfig::load(&config)?;
            let result = cmd_train(&cfg)?;
            println!(
                "trained {} epochs ({} updates); outputs in {}",
                result.metrics.len(),
                result.updates,
                cfg.out_dir.display()
            );
        }
        Command::Eval { checkpoint, config } => {
            let cfg = RunConfig::load(&config)?;
            let report = cmd_eval(&checkpoint, &cfg)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        }
        Command::Plot { spec } => {
            let spec = PlotSpec::load(&spec)?;
            cmd_plot(&spec)?;
            println!("wrote {}", spec.output.display());
        }
        Command::Diagnose { metrics } => {
            let d = cmd_diagnose(&metrics)?;
            if d.co_events.is_empty() {
                println!("no catastrophic-overfitting events in {} epochs", d.epochs);
            }
            for e in &d.co_events {
                println!(
                    "epoch {}: pgd_acc dropped {:.4}, fgsm-pgd gap {:.4}",
                    e.epoch, e.pgd_drop, e.fgsm_pgd_gap
                );
            }
            if let Some(best) = d.best_pgd_epoch {
                println!("best pgd_acc at epoch {best}");
            }
            println!("{}", serde_json::to_string_pretty(&d).expect("diagnosis serializes"));
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
