use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    arwlab::cli::run(arwlab::cli::Cli::parse())
}
