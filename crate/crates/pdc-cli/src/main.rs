//! `pdc` — experiment harness for the decentralized proximal dual
//! consensus solver. See the library crate for the command implementations.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pdc_cli::config::ExperimentConfig;
use pdc_cli::{checks, commands, CliError};

#[derive(Parser)]
#[command(
    name = "pdc",
    about = "Decentralized proximal dual consensus experiments",
    version
)]
struct Cli {
    /// Experiment config file (flat key-value or JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides the config's `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Base seed (overrides the config's `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (overrides `solver.threads` and PDC_MESH_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment (seeded repeats, traces, summary).
    Run,
    /// Run the configured parameter sweep and emit the comparison CSV.
    Sweep,
    /// Run a verification suite: spectra, bounds, oracles, descent, rate.
    Check { suite: String },
    /// Print the theory constants and the step-size regime verdict.
    Bounds,
    /// Print the spectral summary of the configured graph.
    Spectra,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Check reports carry their own formatted output.
            eprint!("{e}");
            if !e.to_string().ends_with('\n') {
                eprintln!();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Writes to stdout, ignoring broken pipes (e.g. when piped into `head`).
fn emit(text: &str) {
    let _ = std::io::stdout().write_all(text.as_bytes());
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Check { suite } => {
            let lines = checks::run_suite(suite)?;
            let rendered = checks::report(suite, &lines)?;
            emit(&rendered);
            Ok(())
        }
        command => {
            let config = load_config(cli)?;
            match command {
                Command::Run => {
                    let out = out_dir(cli, &config)?;
                    commands::cmd_run(&config, &out)?;
                    emit(&format!("wrote traces and summary to {}\n", out.display()));
                    Ok(())
                }
                Command::Sweep => {
                    let out = out_dir(cli, &config)?;
                    commands::cmd_sweep(&config, &out)?;
                    emit(&format!(
                        "wrote sweep comparison to {}\n",
                        out.join("sweep.csv").display()
                    ));
                    Ok(())
                }
                Command::Bounds => {
                    let (text, json) = commands::cmd_bounds(&config)?;
                    emit(&text);
                    if let Some(out) = &cli.out {
                        std::fs::create_dir_all(out)?;
                        std::fs::write(out.join("constants.json"), &json)?;
                    } else {
                        emit(&json);
                        emit("\n");
                    }
                    Ok(())
                }
                Command::Spectra => {
                    let (text, json) = commands::cmd_spectra(&config)?;
                    emit(&text);
                    emit(&json);
                    emit("\n");
                    Ok(())
                }
                Command::Check { .. } => unreachable!("handled above"),
            }
        }
    }
}

/// Loads the config file and applies flag/env overrides.
fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let text = std::fs::read_to_string(path)?;
    let mut config = ExperimentConfig::parse(&text)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let threads = cli.threads.or_else(|| {
        std::env::var("PDC_MESH_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(t) = threads {
        if t < 1 {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        config.solver.threads = Some(t);
    }
    Ok(config)
}

fn out_dir(cli: &Cli, config: &ExperimentConfig) -> Result<PathBuf, CliError> {
    cli.out
        .clone()
        .or_else(|| config.out.as_ref().map(PathBuf::from))
        .ok_or_else(|| CliError::Config("an output directory is required (--out or `out =`)".into()))
}
