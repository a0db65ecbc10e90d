use std::process::ExitCode;

use annopipe_cli::{run, Cli};
use clap::Parser;
use tracing_subscriber::EnvFilter;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .init();
    let argv: Vec<String> = std::env::args().collect();
    // Usage errors exit with 2, help and version with 0.
    let cli = Cli::try_parse_from(&argv).unwrap_or_else(|e| e.exit());
    match run(cli, &argv) {
        Ok(out) => {
            if !out.summary.is_empty() {
                println!("{}", out.summary);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
