//! Command-line driver for synthetic-data attention experiments.
//!
//! `gen` writes datasets, `train` fits a model and writes its checkpoint
//! and metrics, `eval` scores a checkpoint, `visualize` exports attention
//! heatmaps as PPM images and `ablate` sweeps one setting over seeds.
//! Settings come from defaults, then an optional `key=value` file, then
//! flags. Every command writes its resolved settings next to its outputs.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod render;

pub use args::{Cli, Command};
pub use config::{CommandKind, Mode, RunConfig};
pub use error::{CliError, Result, EXIT_RUNTIME, EXIT_USAGE};

/// Runs one command and returns what it prints on standard output.
pub fn run(command: &Command) -> Result<String> {
    let config = RunConfig::resolve(command)?;
    match config.command {
        CommandKind::Gen => commands::gen(&config),
        CommandKind::Train => commands::train(&config),
        CommandKind::Eval => commands::eval(&config),
        CommandKind::Visualize => commands::visualize(&config),
        CommandKind::Ablate => commands::ablate(&config),
    }
}
