use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use trailmaker_cli::{error_json, run, Cli};
use tracing_subscriber::EnvFilter;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            eprintln!("{}", serde_json::json!({ "error": "usage", "message": message.trim() }));
            return ExitCode::from(2);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(outcome) => {
            for line in &outcome.stdout {
                println!("{line}");
            }
            for p in &outcome.problems {
                eprintln!("{}", serde_json::json!({ "error": "input", "file": p.file, "message": p.error }));
            }
            ExitCode::from(outcome.code as u8)
        }
        Err(e) => {
            eprintln!("{}", error_json("failed", &e));
            ExitCode::FAILURE
        }
    }
}
