//! `mrkc` command-line driver.
//!
//! Exit codes: 0 success, 2 usage or precondition error, 3 numerical blow-up.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, FileConfig};
use commands::{default_eps, Common};

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<mrkc::Error>() {
        Some(mrkc::Error::BlowUp { .. } | mrkc::Error::NumericOverflow(_)) => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let common = Common { seed: cli.seed.or(file.seed), eps: default_eps(&file, cli.eps)?, file };
    let outcome = match &cli.command {
        Command::Convergence(a) => commands::convergence(a, &common)?,
        Command::Scan(a) => commands::scan(a, &common)?,
        Command::Speedup(a) => commands::speedup(a, &common)?,
        Command::Run(a) => commands::run(a, &common)?,
    };
    outcome.table.write(cli.out.as_deref())?;
    outcome.summary.emit(cli.json, cli.out.is_none())
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors by itself.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
