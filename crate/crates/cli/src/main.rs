mod args;
mod commands;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, FileConfig, Overlay, SimulateMode};
use commands::Globals;
use error::{CliError, CliResult};

fn load_config(path: &PathBuf) -> CliResult<FileConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::ConfigFile {
        path: path.clone(),
        message: e.to_string(),
    })?;
    toml::from_str(&text).map_err(|e| CliError::ConfigFile {
        path: path.clone(),
        message: e.to_string(),
    })
}

fn run(cli: Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(path) => load_config(path)?,
        None => FileConfig::default(),
    };
    if let Some(threads) = cli.threads.or(file.threads) {
        if threads == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let globals = Globals {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        out_dir: cli
            .out_dir
            .or(file.out_dir)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    match cli.command {
        Command::Estimate(a) => commands::estimate(a.overlay(file.estimate), &globals),
        Command::Lsd(a) => commands::lsd(a.overlay(file.lsd), &globals),
        Command::Calibrate(a) => commands::calibrate(a.overlay(file.calibrate), &globals),
        Command::Simulate { mode } => match mode {
            SimulateMode::Convergence(a) => {
                commands::convergence(a.overlay(file.simulate.convergence), &globals)
            }
            SimulateMode::Response(a) => {
                commands::response(a.overlay(file.simulate.response), &globals)
            }
            SimulateMode::Concentration(a) => {
                commands::concentration(a.overlay(file.simulate.concentration), &globals)
            }
        },
        Command::Backtest(a) => commands::backtest(a.overlay(file.backtest), &globals),
        Command::SynthPanel(a) => commands::synth_panel(a.overlay(file.synth_panel), &globals),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
