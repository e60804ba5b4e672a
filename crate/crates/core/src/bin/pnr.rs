use std::process::ExitCode;

use clap::Parser;
use snspd_pnr::cli::{run, Cli};

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pnr: {e}");
            ExitCode::FAILURE
        }
    }
}
