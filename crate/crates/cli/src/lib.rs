//! Library surface of the CLI, exposed so integration tests can drive the
//! commands in-process.

pub mod args;
pub mod commands;
pub mod config;

use anyhow::Result;
use args::{Cli, Command};

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Fit(args) => commands::cmd_fit(args),
        Command::Embed(args) => commands::cmd_embed(args),
        Command::TrainAe(args) => commands::cmd_train_ae(args),
        Command::Extend(args) => commands::cmd_extend(args),
        Command::Benchmark(args) => commands::cmd_benchmark(args),
    }
}
