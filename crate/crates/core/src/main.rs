use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = weightgauge::cli::Cli::parse();
    match weightgauge::cli::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}
