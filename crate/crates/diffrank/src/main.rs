use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = diffrank::cli::Cli::parse();
    match diffrank::cli::run(cli) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
