use std::process::ExitCode;

use clap::Parser;
use tracing_subscriber::EnvFilter;

use restmarl_cli::{execute, print_digests, strategies, Args, EXIT_OK, EXIT_STARTUP};

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let args = Args::parse();
    match execute(&args, &strategies()) {
        Ok(digests) => {
            if let Err(e) = print_digests(&digests, &args.out) {
                eprintln!("error: cannot write summary: {e}");
                return ExitCode::from(EXIT_STARTUP as u8);
            }
            ExitCode::from(EXIT_OK as u8)
        }
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code as u8)
        }
    }
}
