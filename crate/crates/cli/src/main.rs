use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    match lbmpc_cli::run(lbmpc_cli::Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
