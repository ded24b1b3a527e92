mod args;
mod commands;
mod config;
mod predictions;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;
use config::UsageError;

fn main() -> ExitCode {
    let argv = match config::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    // effective settings, defaults included
    match serde_json::to_string(&cli.command) {
        Ok(s) => eprintln!("settings: {s}"),
        Err(e) => eprintln!("settings: unavailable ({e})"),
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
