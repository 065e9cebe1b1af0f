use std::process::ExitCode;

use clap::Parser;
use hfedit_cli::commands::{run, Cli};
use hfedit_cli::error_line;

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
