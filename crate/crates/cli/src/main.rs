mod args;
mod commands;
mod error;
mod store;

use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    // Argument errors exit with status 2 inside `parse`.
    let cli = args::Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cdclab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
