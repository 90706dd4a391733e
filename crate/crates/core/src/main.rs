use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dirac_afem::cli::{cmd_plot, cmd_rates, cmd_run, parse_config};

#[derive(Parser)]
#[command(name = "dirac-afem", version, about = "Adaptive FEM for optimal control with point sources")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an adaptive experiment described by a `key = value` config file
    Run { config: PathBuf },
    /// Print the log-log slope of a CSV column against ndof
    Rates { csv: PathBuf, field: String, window: usize },
    /// Write a log-log SVG plot of a run
    Plot { csv: PathBuf, out: PathBuf },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config } => {
            let cfg = match std::fs::read_to_string(&config).map_err(dirac_afem::Error::from).and_then(|t| parse_config(&t)) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("error: {}: {e}", config.display());
                    return ExitCode::from(1);
                }
            };
            match cmd_run(&cfg) {
                Ok(records) => {
                    if let Some(last) = records.last() {
                        eprintln!(
                            "{} iterations, final ndof {}, eocp {:.4e}; wrote {}",
                            records.len(),
                            last.ndof,
                            last.eocp,
                            cfg.output_path().display()
                        );
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
        Command::Rates { csv, field, window } => match cmd_rates(&csv, &field, window) {
            Ok(slope) => {
                println!("{slope:.6}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
        Command::Plot { csv, out } => match cmd_plot(&csv, &out) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
    }
}
