//! The `mgdoc` command line: argument definitions and one function per
//! subcommand, each writing its outputs under `--out` with fixed file names.

pub mod args;
pub mod commands;
pub mod config;
pub mod heatmap;

pub use args::{Cli, Command};
pub use config::RunConfig;

/// Runs one parsed command line.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest(a) => commands::ingest(&a),
        Command::Pretrain(a) => commands::pretrain(&a),
        Command::Finetune(a) => commands::finetune(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Heatmap(a) => commands::heatmap(&a),
        Command::Ablate(a) => commands::ablate(&a),
    }
}
